#include "ndgan/wavelet.hpp"

#include "ndgan/error.hpp"

namespace ndgan {

WaveletBands haar_decompose(const Tensor& x) {
    if (x.rank() != 4) throw InputError("haar: expected NCHW map, got " + shape_str(x.shape()));
    if (x.h() % 2 || x.w() % 2) throw InputError("haar: spatial size must be even, got " + shape_str(x.shape()));
    const std::size_t planes = x.n() * x.c(), h = x.h() / 2, w = x.w() / 2;
    const Shape s{x.n(), x.c(), h, w};
    WaveletBands b{Tensor(s), Tensor(s), Tensor(s), Tensor(s)};
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = x.data() + p * 4 * h * w;
        const std::size_t o = p * h * w;
        for (std::size_t i = 0; i < h; ++i) {
            const double* r0 = src + (2 * i) * 2 * w;
            const double* r1 = r0 + 2 * w;
            for (std::size_t j = 0; j < w; ++j) {
                const double a = r0[2 * j], bb = r0[2 * j + 1], c = r1[2 * j], d = r1[2 * j + 1];
                const std::size_t k = o + i * w + j;
                b.ll[k] = 0.5 * (a + bb + c + d);
                b.lh[k] = 0.5 * (a + bb - c - d);
                b.hl[k] = 0.5 * (a - bb + c - d);
                b.hh[k] = 0.5 * (a - bb - c + d);
            }
        }
    }
    return b;
}

namespace {

Tensor synthesize(const Tensor* ll, const Tensor* lh, const Tensor* hl, const Tensor* hh, const Shape& band_shape) {
    const std::size_t h = band_shape[2], w = band_shape[3], planes = band_shape[0] * band_shape[1];
    Tensor x({band_shape[0], band_shape[1], 2 * h, 2 * w});
    auto val = [](const Tensor* t, std::size_t k) { return t ? (*t)[k] : 0.0; };
    for (std::size_t p = 0; p < planes; ++p) {
        double* dst = x.data() + p * 4 * h * w;
        for (std::size_t i = 0; i < h; ++i) {
            double* r0 = dst + (2 * i) * 2 * w;
            double* r1 = r0 + 2 * w;
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t k = p * h * w + i * w + j;
                const double a = val(ll, k), b = val(lh, k), c = val(hl, k), d = val(hh, k);
                r0[2 * j] = 0.5 * (a + b + c + d);
                r0[2 * j + 1] = 0.5 * (a + b - c - d);
                r1[2 * j] = 0.5 * (a - b + c - d);
                r1[2 * j + 1] = 0.5 * (a - b - c + d);
            }
        }
    }
    return x;
}

}  // namespace

Tensor haar_reconstruct(const WaveletBands& bands) {
    const Shape& s = bands.ll.shape();
    if (s.size() != 4 || bands.lh.shape() != s || bands.hl.shape() != s || bands.hh.shape() != s) {
        throw InputError("haar: band shapes disagree");
    }
    return synthesize(&bands.ll, &bands.lh, &bands.hl, &bands.hh, s);
}

Tensor haar_backward(const WaveletBands& g, const Shape& source_shape) {
    if (source_shape.size() != 4 || source_shape[2] % 2 || source_shape[3] % 2) {
        throw InputError("haar: invalid source shape " + shape_str(source_shape));
    }
    const Shape s{source_shape[0], source_shape[1], source_shape[2] / 2, source_shape[3] / 2};
    auto pick = [&](const Tensor& t) -> const Tensor* {
        if (t.empty()) return nullptr;
        if (t.shape() != s) throw InputError("haar: band gradient shape mismatch");
        return &t;
    };
    return synthesize(pick(g.ll), pick(g.lh), pick(g.hl), pick(g.hh), s);
}

}  // namespace ndgan
