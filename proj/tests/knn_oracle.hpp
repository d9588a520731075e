#pragma once

// Quadratic-time reference for the kNN-ball metrics: full sort for every
// radius, explicit membership counts for every pair.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ndgan/rng.hpp"
#include "ndgan/tensor.hpp"

namespace ndgan::testing {

inline double d2(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.dim(1); ++k) s += (a[i * a.dim(1) + k] - b[j * b.dim(1) + k]) * (a[i * a.dim(1) + k] - b[j * b.dim(1) + k]);
    return s;
}

struct Brute {
    double precision, recall, density, coverage;
};

inline std::vector<double> brute_radii(const Tensor& x, int k) {
    std::vector<double> r;
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        std::vector<double> ds;
        for (std::size_t j = 0; j < x.dim(0); ++j)
            if (j != i) ds.push_back(d2(x, i, x, j));
        std::sort(ds.begin(), ds.end());
        r.push_back(ds[static_cast<std::size_t>(k - 1)]);
    }
    return r;
}

inline Brute brute(const Tensor& real, const Tensor& fake, int k) {
    const auto rr = brute_radii(real, k), rf = brute_radii(fake, k);
    const std::size_t nr = real.dim(0), nf = fake.dim(0);
    Brute b{};
    std::size_t p = 0, rec = 0, dens = 0, cov = 0;
    for (std::size_t j = 0; j < nf; ++j) {
        bool in = false;
        for (std::size_t i = 0; i < nr; ++i) {
            if (d2(fake, j, real, i) <= rr[i]) {
                in = true;
                ++dens;
            }
        }
        p += in;
    }
    for (std::size_t i = 0; i < nr; ++i) {
        bool in = false, c = false;
        for (std::size_t j = 0; j < nf; ++j) {
            in |= d2(real, i, fake, j) <= rf[j];
            c |= d2(fake, j, real, i) <= rr[i];
        }
        rec += in;
        cov += c;
    }
    b.precision = static_cast<double>(p) / nf;
    b.recall = static_cast<double>(rec) / nr;
    b.density = static_cast<double>(dens) / (k * static_cast<double>(nf));
    b.coverage = static_cast<double>(cov) / nr;
    return b;
}

// Point clouds and rigid transforms for the invariance checks.
inline Tensor integer_points(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed, "pts");
    Tensor t({n, d});
    for (double& v : t.values()) v = static_cast<double>(rng.below(9)) - 4.0;
    return t;
}

inline Tensor permute_rows(const Tensor& t, std::uint64_t seed) {
    std::vector<std::size_t> idx(t.dim(0));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed, "perm");
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    Tensor out(t.shape());
    for (std::size_t i = 0; i < idx.size(); ++i) std::copy(t.item(idx[i]).begin(), t.item(idx[i]).end(), out.item(i).begin());
    return out;
}

// Rotation in the (0,1) plane, reflection of axis 2, then a translation.
inline Tensor isometry(const Tensor& t) {
    Tensor out = t;
    const double c = std::cos(0.7), s = std::sin(0.7);
    for (std::size_t i = 0; i < t.dim(0); ++i) {
        double* r = out.data() + i * t.dim(1);
        const double x = r[0], y = r[1];
        r[0] = c * x - s * y + 3.0;
        r[1] = s * x + c * y - 1.0;
        r[2] = -r[2] + 0.5;
    }
    return out;
}

}  // namespace ndgan::testing
