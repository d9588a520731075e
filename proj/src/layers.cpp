#include "ndgan/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ndgan/error.hpp"
#include "ndgan/simd.hpp"

namespace ndgan {
namespace {

Param make_param(std::string name, Shape shape) {
    Param p{std::move(name), Tensor(shape), Tensor(shape)};
    return p;
}

void init_normal(Tensor& t, Rng& rng, double std) {
    for (double& v : t.values()) v = rng.normal() * std;
}

void require_rank4(const Tensor& x, const char* who) {
    if (x.rank() != 4) throw InputError(std::string(who) + ": expected NCHW input, got " + shape_str(x.shape()));
}

}  // namespace

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t in, std::size_t out, Rng& rng, double gain)
    : in_(in), out_(out), weight_(make_param("weight", {out, in})), bias_(make_param("bias", {out})) {
    init_normal(weight_.value, rng, gain / std::sqrt(static_cast<double>(in)));
}

Tensor Dense::forward(const Tensor& x) {
    const std::size_t batch = x.dim(0);
    if (x.item_size() != in_) {
        throw InputError("dense: expected " + std::to_string(in_) + " features, got " + shape_str(x.shape()));
    }
    input_ = x;
    Tensor y({batch, out_});
    gemm_nt(batch, out_, in_, x.data(), weight_.value.data(), y.data(), false);
    for (std::size_t b = 0; b < batch; ++b) simd::axpy(1.0, bias_.value.span(), y.item(b));
    return y;
}

Tensor Dense::backward(const Tensor& grad_out, bool param_grads) {
    const std::size_t batch = input_.dim(0);
    if (param_grads) {
        gemm_tn(out_, in_, batch, grad_out.data(), input_.data(), weight_.grad.data(), true);
        for (std::size_t b = 0; b < batch; ++b) simd::axpy(1.0, grad_out.item(b), bias_.grad.span());
    }
    Tensor dx(input_.shape());
    gemm_nn(batch, in_, out_, grad_out.data(), weight_.value.data(), dx.data(), false);
    return dx;
}

Shape Dense::item_output_shape(const Shape& item_in) const {
    if (shape_numel(item_in) != in_) throw InputError("dense: input size mismatch " + shape_str(item_in));
    return {out_};
}

std::uint64_t Dense::macs(const Shape&) const { return static_cast<std::uint64_t>(in_) * out_; }

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t ksize, Rng& rng, double gain)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      ksize_(ksize),
      weight_(make_param("weight", {out_ch, in_ch * ksize * ksize})),
      bias_(make_param("bias", {out_ch})) {
    if (ksize % 2 == 0) throw ConfigError("conv: kernel size must be odd");
    init_normal(weight_.value, rng, gain / std::sqrt(static_cast<double>(in_ch * ksize * ksize)));
}

Tensor Conv2d::forward(const Tensor& x) {
    require_rank4(x, "conv");
    if (x.c() != in_ch_) {
        throw InputError("conv: expected " + std::to_string(in_ch_) + " channels, got " + shape_str(x.shape()));
    }
    const std::size_t batch = x.n(), h = x.h(), w = x.w(), hw = h * w;
    const std::size_t kk = ksize_ * ksize_, kdim = in_ch_ * kk;
    const auto pad = static_cast<std::ptrdiff_t>(ksize_ / 2);
    in_shape_ = x.shape();
    cols_.assign(batch * kdim * hw, 0.0);
    Tensor y({batch, out_ch_, h, w});
    for (std::size_t b = 0; b < batch; ++b) {
        double* col = cols_.data() + b * kdim * hw;
        const double* src = x.data() + b * in_ch_ * hw;
        if (ksize_ == 1) {
            std::memcpy(col, src, sizeof(double) * kdim * hw);
        } else {
            for (std::size_t c = 0; c < in_ch_; ++c) {
                for (std::size_t ky = 0; ky < ksize_; ++ky) {
                    for (std::size_t kx = 0; kx < ksize_; ++kx) {
                        double* row = col + ((c * ksize_ + ky) * ksize_ + kx) * hw;
                        const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
                        const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
                        for (std::size_t oy = 0; oy < h; ++oy) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy) + dy;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            const double* srow = src + (c * h + static_cast<std::size_t>(iy)) * w;
                            double* drow = row + oy * w;
                            const std::size_t x0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
                            const std::size_t x1 = dx > 0 ? w - static_cast<std::size_t>(dx) : w;
                            for (std::size_t ox = x0; ox < x1; ++ox) {
                                drow[ox] = srow[static_cast<std::ptrdiff_t>(ox) + dx];
                            }
                        }
                    }
                }
            }
        }
        double* dst = y.data() + b * out_ch_ * hw;
        gemm_nn(out_ch_, hw, kdim, weight_.value.data(), col, dst, false);
        for (std::size_t o = 0; o < out_ch_; ++o) {
            const double bv = bias_.value[o];
            double* plane = dst + o * hw;
            for (std::size_t i = 0; i < hw; ++i) plane[i] += bv;
        }
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& grad_out, bool param_grads) {
    const std::size_t batch = in_shape_[0], h = in_shape_[2], w = in_shape_[3], hw = h * w;
    const std::size_t kdim = in_ch_ * ksize_ * ksize_;
    const auto pad = static_cast<std::ptrdiff_t>(ksize_ / 2);
    Tensor dx(in_shape_);
    std::vector<double> dcol(kdim * hw);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* g = grad_out.data() + b * out_ch_ * hw;
        const double* col = cols_.data() + b * kdim * hw;
        if (param_grads) {
            gemm_nt(out_ch_, kdim, hw, g, col, weight_.grad.data(), true);
            for (std::size_t o = 0; o < out_ch_; ++o) {
                const double* plane = g + o * hw;
                double s = 0.0;
                for (std::size_t i = 0; i < hw; ++i) s += plane[i];
                bias_.grad[o] += s;
            }
        }
        gemm_tn(kdim, hw, out_ch_, weight_.value.data(), g, dcol.data(), false);
        double* dst = dx.data() + b * in_ch_ * hw;
        if (ksize_ == 1) {
            std::memcpy(dst, dcol.data(), sizeof(double) * kdim * hw);
            continue;
        }
        for (std::size_t c = 0; c < in_ch_; ++c) {
            for (std::size_t ky = 0; ky < ksize_; ++ky) {
                for (std::size_t kx = 0; kx < ksize_; ++kx) {
                    const double* row = dcol.data() + ((c * ksize_ + ky) * ksize_ + kx) * hw;
                    const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
                    const auto ddx = static_cast<std::ptrdiff_t>(kx) - pad;
                    for (std::size_t oy = 0; oy < h; ++oy) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy) + dy;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        double* drow = dst + (c * h + static_cast<std::size_t>(iy)) * w;
                        const double* srow = row + oy * w;
                        const std::size_t x0 = ddx < 0 ? static_cast<std::size_t>(-ddx) : 0;
                        const std::size_t x1 = ddx > 0 ? w - static_cast<std::size_t>(ddx) : w;
                        for (std::size_t ox = x0; ox < x1; ++ox) {
                            drow[static_cast<std::ptrdiff_t>(ox) + ddx] += srow[ox];
                        }
                    }
                }
            }
        }
    }
    return dx;
}

Shape Conv2d::item_output_shape(const Shape& item_in) const {
    if (item_in.size() != 3 || item_in[0] != in_ch_) throw InputError("conv: bad input shape " + shape_str(item_in));
    return {out_ch_, item_in[1], item_in[2]};
}

std::uint64_t Conv2d::macs(const Shape& item_in) const {
    return static_cast<std::uint64_t>(ksize_) * ksize_ * in_ch_ * out_ch_ * item_in.at(1) * item_in.at(2);
}

// ---------------------------------------------------------------- activations

Tensor LeakyRelu::forward(const Tensor& x) {
    Tensor y = x;
    positive_.resize(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const bool pos = x[i] > 0.0;
        positive_[i] = pos;
        if (!pos) y[i] *= slope_;
    }
    return y;
}

Tensor LeakyRelu::backward(const Tensor& grad_out, bool) {
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.numel(); ++i) {
        if (!positive_[i]) dx[i] *= slope_;
    }
    return dx;
}

Tensor Tanh::forward(const Tensor& x) {
    output_ = x;
    for (double& v : output_.values()) v = std::tanh(v);
    return output_;
}

Tensor Tanh::backward(const Tensor& grad_out, bool) {
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] *= 1.0 - output_[i] * output_[i];
    return dx;
}

// ---------------------------------------------------------------- resampling

Tensor UpsampleNearest2x::forward(const Tensor& x) {
    require_rank4(x, "upsample");
    const std::size_t planes = x.n() * x.c(), h = x.h(), w = x.w();
    Tensor y({x.n(), x.c(), 2 * h, 2 * w});
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = x.data() + p * h * w;
        double* dst = y.data() + p * 4 * h * w;
        for (std::size_t iy = 0; iy < h; ++iy) {
            double* r0 = dst + (2 * iy) * 2 * w;
            double* r1 = r0 + 2 * w;
            for (std::size_t ix = 0; ix < w; ++ix) {
                const double v = src[iy * w + ix];
                r0[2 * ix] = r0[2 * ix + 1] = r1[2 * ix] = r1[2 * ix + 1] = v;
            }
        }
    }
    return y;
}

Tensor UpsampleNearest2x::backward(const Tensor& grad_out, bool) {
    const std::size_t planes = grad_out.n() * grad_out.c(), h = grad_out.h() / 2, w = grad_out.w() / 2;
    Tensor dx({grad_out.n(), grad_out.c(), h, w});
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = grad_out.data() + p * 4 * h * w;
        double* dst = dx.data() + p * h * w;
        for (std::size_t iy = 0; iy < h; ++iy) {
            const double* r0 = src + (2 * iy) * 2 * w;
            const double* r1 = r0 + 2 * w;
            for (std::size_t ix = 0; ix < w; ++ix) {
                dst[iy * w + ix] = r0[2 * ix] + r0[2 * ix + 1] + r1[2 * ix] + r1[2 * ix + 1];
            }
        }
    }
    return dx;
}

Shape UpsampleNearest2x::item_output_shape(const Shape& item_in) const {
    return {item_in.at(0), 2 * item_in.at(1), 2 * item_in.at(2)};
}

Tensor AvgPool2x::forward(const Tensor& x) {
    require_rank4(x, "avgpool");
    if (x.h() % 2 || x.w() % 2) throw InputError("avgpool: odd spatial size " + shape_str(x.shape()));
    const std::size_t planes = x.n() * x.c(), h = x.h() / 2, w = x.w() / 2;
    Tensor y({x.n(), x.c(), h, w});
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = x.data() + p * 4 * h * w;
        double* dst = y.data() + p * h * w;
        for (std::size_t oy = 0; oy < h; ++oy) {
            const double* r0 = src + (2 * oy) * 2 * w;
            const double* r1 = r0 + 2 * w;
            for (std::size_t ox = 0; ox < w; ++ox) {
                dst[oy * w + ox] = 0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
            }
        }
    }
    return y;
}

Tensor AvgPool2x::backward(const Tensor& grad_out, bool) {
    const std::size_t planes = grad_out.n() * grad_out.c(), h = grad_out.h(), w = grad_out.w();
    Tensor dx({grad_out.n(), grad_out.c(), 2 * h, 2 * w});
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = grad_out.data() + p * h * w;
        double* dst = dx.data() + p * 4 * h * w;
        for (std::size_t oy = 0; oy < h; ++oy) {
            double* r0 = dst + (2 * oy) * 2 * w;
            double* r1 = r0 + 2 * w;
            for (std::size_t ox = 0; ox < w; ++ox) {
                const double g = 0.25 * src[oy * w + ox];
                r0[2 * ox] = r0[2 * ox + 1] = r1[2 * ox] = r1[2 * ox + 1] = g;
            }
        }
    }
    return dx;
}

Shape AvgPool2x::item_output_shape(const Shape& item_in) const {
    return {item_in.at(0), item_in.at(1) / 2, item_in.at(2) / 2};
}

std::vector<BilinearResize::Tap> BilinearResize::axis_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto i0 = static_cast<std::size_t>(std::floor(src));
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        const double frac = src - static_cast<double>(i0);
        taps[o] = {i0, i1, 1.0 - frac, frac};
    }
    return taps;
}

Tensor BilinearResize::forward(const Tensor& x) {
    require_rank4(x, "bilinear");
    in_shape_ = x.shape();
    if (x.h() == out_h_ && x.w() == out_w_) return x;
    const auto ty = axis_taps(x.h(), out_h_);
    const auto tx = axis_taps(x.w(), out_w_);
    const std::size_t planes = x.n() * x.c(), ih = x.h(), iw = x.w();
    Tensor y({x.n(), x.c(), out_h_, out_w_});
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = x.data() + p * ih * iw;
        double* dst = y.data() + p * out_h_ * out_w_;
        for (std::size_t oy = 0; oy < out_h_; ++oy) {
            const Tap& a = ty[oy];
            for (std::size_t ox = 0; ox < out_w_; ++ox) {
                const Tap& b = tx[ox];
                dst[oy * out_w_ + ox] = a.w0 * (b.w0 * src[a.i0 * iw + b.i0] + b.w1 * src[a.i0 * iw + b.i1]) +
                                        a.w1 * (b.w0 * src[a.i1 * iw + b.i0] + b.w1 * src[a.i1 * iw + b.i1]);
            }
        }
    }
    return y;
}

Tensor BilinearResize::backward(const Tensor& grad_out, bool) {
    const std::size_t ih = in_shape_[2], iw = in_shape_[3];
    if (ih == out_h_ && iw == out_w_) return grad_out;
    const auto ty = axis_taps(ih, out_h_);
    const auto tx = axis_taps(iw, out_w_);
    const std::size_t planes = in_shape_[0] * in_shape_[1];
    Tensor dx(in_shape_);
    for (std::size_t p = 0; p < planes; ++p) {
        const double* g = grad_out.data() + p * out_h_ * out_w_;
        double* dst = dx.data() + p * ih * iw;
        for (std::size_t oy = 0; oy < out_h_; ++oy) {
            const Tap& a = ty[oy];
            for (std::size_t ox = 0; ox < out_w_; ++ox) {
                const Tap& b = tx[ox];
                const double v = g[oy * out_w_ + ox];
                dst[a.i0 * iw + b.i0] += a.w0 * b.w0 * v;
                dst[a.i0 * iw + b.i1] += a.w0 * b.w1 * v;
                dst[a.i1 * iw + b.i0] += a.w1 * b.w0 * v;
                dst[a.i1 * iw + b.i1] += a.w1 * b.w1 * v;
            }
        }
    }
    return dx;
}

Shape BilinearResize::item_output_shape(const Shape& item_in) const { return {item_in.at(0), out_h_, out_w_}; }

Tensor Reshape::forward(const Tensor& x) {
    in_shape_ = x.shape();
    Shape s{x.dim(0)};
    s.insert(s.end(), item_shape_.begin(), item_shape_.end());
    Tensor y = x;
    y.reshape(std::move(s));
    return y;
}

Tensor Reshape::backward(const Tensor& grad_out, bool) {
    Tensor dx = grad_out;
    dx.reshape(in_shape_);
    return dx;
}

Shape Reshape::item_output_shape(const Shape& item_in) const {
    if (shape_numel(item_in) != shape_numel(item_shape_)) throw InputError("reshape: size mismatch");
    return item_shape_;
}

// ---------------------------------------------------------------- Sequential

void Sequential::add(std::string prefix, std::unique_ptr<Layer> layer) {
    for (Param* p : layer->params()) p->name = prefix + "." + p->name;
    layers_.push_back(std::move(layer));
}

Tensor Sequential::forward(const Tensor& x) {
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h);
    return h;
}

Tensor Sequential::backward(const Tensor& grad_out, bool param_grads) {
    Tensor g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g, param_grads);
    return g;
}

std::vector<Param*> Sequential::params() {
    std::vector<Param*> out;
    for (auto& l : layers_) {
        for (Param* p : l->params()) out.push_back(p);
    }
    return out;
}

Shape Sequential::item_output_shape(Shape item_in) const {
    for (const auto& l : layers_) item_in = l->item_output_shape(item_in);
    return item_in;
}

std::uint64_t Sequential::macs(Shape item_in) const {
    std::uint64_t total = 0;
    for (const auto& l : layers_) {
        total += l->macs(item_in);
        item_in = l->item_output_shape(item_in);
    }
    return total;
}

void zero_grads(const std::vector<Param*>& params) {
    for (Param* p : params) p->grad.fill(0.0);
}

std::size_t param_count(const std::vector<Param*>& params) {
    std::size_t n = 0;
    for (const Param* p : params) n += p->value.numel();
    return n;
}

void copy_param_values(const std::vector<Param*>& from, const std::vector<Param*>& to) {
    if (from.size() != to.size()) throw InputError("copy_param_values: parameter count mismatch");
    for (std::size_t i = 0; i < from.size(); ++i) {
        if (from[i]->value.shape() != to[i]->value.shape()) {
            throw InputError("copy_param_values: shape mismatch for " + to[i]->name);
        }
        to[i]->value = from[i]->value;
    }
}

}  // namespace ndgan
