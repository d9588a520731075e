#pragma once

// Runtime-dispatched vector kernels. Every kernel has a scalar reference
// implementation; AVX2+FMA (x86-64) and NEON (aarch64) variants are selected at
// startup when the CPU supports them. The higher layers (GEMM, convolution,
// pairwise distances) only ever call through the active table.

#include <cstddef>
#include <span>
#include <string_view>

namespace ndgan::simd {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

struct KernelTable {
    Isa isa;
    // sum_i a[i] * b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y[i] += alpha * x[i]
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // y[i] += a[0]*x[0][i] + a[1]*x[1][i] + a[2]*x[2][i] + a[3]*x[3][i]
    void (*axpy4)(const double* alpha, const double* const* x, double* y, std::size_t n);
    // sum_i (a[i] - b[i])^2
    double (*sq_dist)(const double* a, const double* b, std::size_t n);
    // sum_i |a[i] - b[i]|
    double (*l1_dist)(const double* a, const double* b, std::size_t n);
};

// Best ISA the running CPU supports (and the binary was built with).
Isa detect();

bool available(Isa isa);

// Table for a specific ISA; throws ConfigError if unavailable.
const KernelTable& table(Isa isa);

// Currently selected table. Defaults to detect(); NDGAN_ISA=scalar|avx2|neon
// in the environment overrides the choice.
const KernelTable& active();

// Testing hook: pins the active table. Not thread-safe against concurrent
// kernel calls.
void set_active(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
    return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    active().axpy(alpha, x.data(), y.data(), x.size());
}

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
    return active().sq_dist(a.data(), b.data(), a.size());
}

inline double l1_dist(std::span<const double> a, std::span<const double> b) {
    return active().l1_dist(a.data(), b.data(), a.size());
}

namespace detail {
extern const KernelTable scalar_table;
#if defined(NDGAN_HAVE_AVX2)
extern const KernelTable avx2_table;
#endif
#if defined(NDGAN_HAVE_NEON)
extern const KernelTable neon_table;
#endif
}  // namespace detail

}  // namespace ndgan::simd
