#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ndgan {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major double tensor. 4-D tensors are NCHW.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // NCHW accessors; only meaningful for rank-4 tensors.
    std::size_t n() const { return shape_.at(0); }
    std::size_t c() const { return shape_.at(1); }
    std::size_t h() const { return shape_.at(2); }
    std::size_t w() const { return shape_.at(3); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> span() noexcept { return data_; }
    std::span<const double> span() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    // Contiguous slice of one leading-dimension item.
    std::span<double> item(std::size_t i);
    std::span<const double> item(std::size_t i) const;
    std::size_t item_size() const;

    void reshape(Shape shape);
    void fill(double v);
    bool all_finite() const;

    Tensor& operator+=(const Tensor& other);
    Tensor& operator*=(double s);

private:
    Shape shape_;
    std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(Tensor a, double s);

double sum(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
double squared_norm(const Tensor& t);

// Stack equal-shaped items along a new leading dimension.
Tensor concat_batch(const Tensor& a, const Tensor& b);
Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t end);

// C[m x n] (+)= A[m x k] * B[k x n], all row-major.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate);
// C[m x n] (+)= A[m x k] * B[n x k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate);
// C[m x n] (+)= A[k x m]^T * B[k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate);

}  // namespace ndgan
