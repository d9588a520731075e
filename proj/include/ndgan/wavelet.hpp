#pragma once

// Single-level orthonormal 2-D Haar transform over NCHW feature maps.
//
// For each 2x2 block [[a, b], [c, d]]:
//   LL = (a + b + c + d) / 2     LH = (a + b - c - d) / 2
//   HL = (a - b + c - d) / 2     HH = (a - b - c + d) / 2
// The transform is orthonormal, so its adjoint (used for backprop) is the
// reconstruction.

#include "ndgan/tensor.hpp"

namespace ndgan {

struct WaveletBands {
    Tensor ll, lh, hl, hh;
};

WaveletBands haar_decompose(const Tensor& x);
Tensor haar_reconstruct(const WaveletBands& bands);

// Gradient w.r.t. the source map given gradients w.r.t. each band. Empty band
// tensors are treated as zero.
Tensor haar_backward(const WaveletBands& band_grads, const Shape& source_shape);

}  // namespace ndgan
