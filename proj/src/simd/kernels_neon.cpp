#include "ndgan/simd.hpp"

#if defined(NDGAN_HAVE_NEON)

#include <arm_neon.h>

#include <cmath>

namespace ndgan::simd::detail {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
    }
    double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy4_neon(const double* alpha, const double* const* x, double* y, std::size_t n) {
    const float64x2_t a0 = vdupq_n_f64(alpha[0]);
    const float64x2_t a1 = vdupq_n_f64(alpha[1]);
    const float64x2_t a2 = vdupq_n_f64(alpha[2]);
    const float64x2_t a3 = vdupq_n_f64(alpha[3]);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t acc = vld1q_f64(y + i);
        acc = vfmaq_f64(acc, a0, vld1q_f64(x[0] + i));
        acc = vfmaq_f64(acc, a1, vld1q_f64(x[1] + i));
        acc = vfmaq_f64(acc, a2, vld1q_f64(x[2] + i));
        acc = vfmaq_f64(acc, a3, vld1q_f64(x[3] + i));
        vst1q_f64(y + i, acc);
    }
    for (; i < n; ++i) y[i] += alpha[0] * x[0][i] + alpha[1] * x[1][i] + alpha[2] * x[2][i] + alpha[3] * x[3][i];
}

double sq_dist_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t d = vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
        acc = vfmaq_f64(acc, d, d);
    }
    double total = vaddvq_f64(acc);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        total += d * d;
    }
    return total;
}

double l1_dist_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vabdq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    double total = vaddvq_f64(acc);
    for (; i < n; ++i) total += std::fabs(a[i] - b[i]);
    return total;
}

}  // namespace

const KernelTable neon_table{Isa::neon, dot_neon, axpy_neon, axpy4_neon, sq_dist_neon, l1_dist_neon};

}  // namespace ndgan::simd::detail

#endif
