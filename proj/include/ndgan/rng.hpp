#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ndgan {

std::uint64_t splitmix64(std::uint64_t x);

// Stable 64-bit FNV-1a, used to turn stream names into seeds.
std::uint64_t fnv1a64(std::string_view s);

// Seed for a named, splittable stream. Identical (seed, stream, step) always
// gives the same engine state; distinct streams are decorrelated by
// splitmix64 mixing.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t step = 0);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}
    Rng(std::uint64_t seed, std::string_view stream, std::uint64_t step = 0)
        : engine_(derive_seed(seed, stream, step)) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace ndgan
