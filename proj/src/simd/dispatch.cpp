#include "ndgan/simd.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "ndgan/error.hpp"

namespace ndgan::simd {
namespace {

bool cpu_has_avx2() {
#if defined(NDGAN_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable* initial_table() {
    if (const char* env = std::getenv("NDGAN_ISA")) {
        const std::string want(env);
        if (want == "scalar") return &table(Isa::scalar);
        if (want == "avx2" && available(Isa::avx2)) return &table(Isa::avx2);
        if (want == "neon" && available(Isa::neon)) return &table(Isa::neon);
    }
    return &table(detect());
}

std::atomic<const KernelTable*>& active_slot() {
    static std::atomic<const KernelTable*> slot{initial_table()};
    return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "unknown";
}

bool available(Isa isa) {
    switch (isa) {
        case Isa::scalar: return true;
        case Isa::avx2: return cpu_has_avx2();
        case Isa::neon:
#if defined(NDGAN_HAVE_NEON)
            return true;
#else
            return false;
#endif
    }
    return false;
}

Isa detect() {
    if (available(Isa::avx2)) return Isa::avx2;
    if (available(Isa::neon)) return Isa::neon;
    return Isa::scalar;
}

const KernelTable& table(Isa isa) {
    if (!available(isa)) throw ConfigError("simd: ISA not available: " + std::string(isa_name(isa)));
    switch (isa) {
#if defined(NDGAN_HAVE_AVX2)
        case Isa::avx2: return detail::avx2_table;
#endif
#if defined(NDGAN_HAVE_NEON)
        case Isa::neon: return detail::neon_table;
#endif
        default: return detail::scalar_table;
    }
}

const KernelTable& active() { return *active_slot().load(std::memory_order_relaxed); }

void set_active(Isa isa) { active_slot().store(&table(isa), std::memory_order_relaxed); }

}  // namespace ndgan::simd
