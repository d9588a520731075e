#include "ndgan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "ndgan/error.hpp"
#include "ndgan/simd.hpp"

namespace ndgan {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
        throw InputError("tensor: data size " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
    }
}

std::size_t Tensor::item_size() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

std::span<double> Tensor::item(std::size_t i) {
    const std::size_t sz = item_size();
    return std::span<double>(data_).subspan(i * sz, sz);
}

std::span<const double> Tensor::item(std::size_t i) const {
    const std::size_t sz = item_size();
    return std::span<const double>(data_).subspan(i * sz, sz);
}

void Tensor::reshape(Shape shape) {
    if (shape_numel(shape) != data_.size()) {
        throw InputError("tensor: cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    shape_ = std::move(shape);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
    if (other.shape_ != shape_) {
        throw InputError("tensor: shape mismatch " + shape_str(shape_) + " vs " + shape_str(other.shape_));
    }
    simd::axpy(1.0, other.span(), span());
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Tensor operator+(Tensor a, const Tensor& b) {
    a += b;
    return a;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    if (a.shape() != b.shape()) throw InputError("tensor: shape mismatch in subtraction");
    simd::axpy(-1.0, b.span(), out.span());
    return out;
}

Tensor operator*(Tensor a, double s) {
    a *= s;
    return a;
}

double sum(const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += v;
    return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw InputError("tensor: shape mismatch in max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

double squared_norm(const Tensor& t) { return simd::dot(t.span(), t.span()); }

Tensor concat_batch(const Tensor& a, const Tensor& b) {
    if (a.rank() == 0 || a.rank() != b.rank() ||
        !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
        throw InputError("tensor: concat_batch shape mismatch");
    }
    Shape s = a.shape();
    s[0] += b.shape()[0];
    std::vector<double> data;
    data.reserve(a.numel() + b.numel());
    data.insert(data.end(), a.values().begin(), a.values().end());
    data.insert(data.end(), b.values().begin(), b.values().end());
    return Tensor(std::move(s), std::move(data));
}

Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t end) {
    if (begin > end || end > t.dim(0)) throw InputError("tensor: slice_batch out of range");
    Shape s = t.shape();
    s[0] = end - begin;
    const std::size_t sz = t.item_size();
    std::vector<double> data(t.values().begin() + static_cast<std::ptrdiff_t>(begin * sz),
                             t.values().begin() + static_cast<std::ptrdiff_t>(end * sz));
    return Tensor(std::move(s), std::move(data));
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate) {
    const auto& kt = simd::active();
    if (!accumulate) std::memset(c, 0, sizeof(double) * m * n);
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        std::size_t p = 0;
        for (; p + 4 <= k; p += 4) {
            const double* rows[4] = {b + p * n, b + (p + 1) * n, b + (p + 2) * n, b + (p + 3) * n};
            kt.axpy4(arow + p, rows, crow, n);
        }
        for (; p < k; ++p) kt.axpy(arow[p], b + p * n, crow, n);
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate) {
    const auto& kt = simd::active();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double v = kt.dot(arow, b + j * k, k);
            crow[j] = accumulate ? crow[j] + v : v;
        }
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate) {
    const auto& kt = simd::active();
    if (!accumulate) std::memset(c, 0, sizeof(double) * m * n);
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
        const double* rows[4] = {b + p * n, b + (p + 1) * n, b + (p + 2) * n, b + (p + 3) * n};
        for (std::size_t i = 0; i < m; ++i) {
            const double alpha[4] = {a[p * m + i], a[(p + 1) * m + i], a[(p + 2) * m + i], a[(p + 3) * m + i]};
            kt.axpy4(alpha, rows, c + i * n, n);
        }
    }
    for (; p < k; ++p) {
        for (std::size_t i = 0; i < m; ++i) kt.axpy(a[p * m + i], b + p * n, c + i * n, n);
    }
}

}  // namespace ndgan
