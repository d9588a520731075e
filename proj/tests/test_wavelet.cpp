#include "doctest.h"

#include <cmath>

#include "ndgan/error.hpp"
#include "ndgan/wavelet.hpp"
#include "test_util.hpp"

using namespace ndgan;
using ndgan::testing::check_gradient;
using ndgan::testing::random_tensor;

TEST_CASE("hand-computed 2x2 block") {
    const Tensor x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    const WaveletBands b = haar_decompose(x);
    CHECK(b.ll[0] == 5.0);
    CHECK(b.lh[0] == -2.0);
    CHECK(b.hl[0] == -1.0);
    CHECK(b.hh[0] == 0.0);
    const Tensor back = haar_reconstruct(b);
    CHECK(back.values() == x.values());
}

TEST_CASE("band formulas on a random block") {
    const Tensor x = random_tensor({1, 1, 2, 2}, 4);
    const double a = x[0], b = x[1], c = x[2], d = x[3];
    const WaveletBands w = haar_decompose(x);
    CHECK(w.ll[0] == doctest::Approx((a + b + c + d) / 2));
    CHECK(w.lh[0] == doctest::Approx((a + b - c - d) / 2));
    CHECK(w.hl[0] == doctest::Approx((a - b + c - d) / 2));
    CHECK(w.hh[0] == doctest::Approx((a - b - c + d) / 2));
}

TEST_CASE("constant maps have no detail") {
    const Tensor x({2, 3, 4, 6}, 1.75);
    const WaveletBands b = haar_decompose(x);
    CHECK(b.ll.shape() == Shape{2, 3, 2, 3});
    for (double v : b.ll.values()) CHECK(v == 3.5);
    CHECK(squared_norm(b.lh) + squared_norm(b.hl) + squared_norm(b.hh) == 0.0);
}

TEST_CASE("perfect reconstruction and energy conservation") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Tensor x = random_tensor({2, 3, 8, 8}, seed, 3.0);
        const WaveletBands b = haar_decompose(x);
        CHECK(max_abs_diff(haar_reconstruct(b), x) < 1e-12);
        const double e = squared_norm(b.ll) + squared_norm(b.lh) + squared_norm(b.hl) + squared_norm(b.hh);
        CHECK(std::fabs(e - squared_norm(x)) / squared_norm(x) < 1e-12);
    }
}

TEST_CASE("zero bands reconstruct to a zero map") {
    const Shape s{1, 2, 3, 3};
    const Tensor out = haar_reconstruct({Tensor(s), Tensor(s), Tensor(s), Tensor(s)});
    CHECK(out.shape() == Shape{1, 2, 6, 6});
    CHECK(squared_norm(out) == 0.0);
}

TEST_CASE("shape errors") {
    CHECK_THROWS_AS(haar_decompose(Tensor({1, 1, 3, 4})), InputError);
    CHECK_THROWS_AS(haar_decompose(Tensor({4, 4})), InputError);
    const Shape s{1, 1, 2, 2};
    CHECK_THROWS_AS(haar_reconstruct({Tensor(s), Tensor(s), Tensor({1, 1, 2, 3}), Tensor(s)}), InputError);
}

TEST_CASE("backward is the adjoint of decompose") {
    Tensor x = random_tensor({1, 2, 4, 4}, 8);
    const WaveletBands b0 = haar_decompose(x);
    const WaveletBands w{random_tensor(b0.ll.shape(), 1), random_tensor(b0.ll.shape(), 2),
                         random_tensor(b0.ll.shape(), 3), random_tensor(b0.ll.shape(), 4)};
    auto f = [&] {
        const WaveletBands b = haar_decompose(x);
        double s = 0.0;
        for (std::size_t i = 0; i < b.ll.numel(); ++i) {
            s += w.ll[i] * b.ll[i] + w.lh[i] * b.lh[i] + w.hl[i] * b.hl[i] + w.hh[i] * b.hh[i];
        }
        return s;
    };
    const Tensor g = haar_backward(w, x.shape());
    CHECK(check_gradient(f, x, g).max_rel < 1e-8);

    // Empty bands count as zero.
    const Tensor only_hh = haar_backward({Tensor(), Tensor(), Tensor(), w.hh}, x.shape());
    WaveletBands z{Tensor(w.ll.shape()), Tensor(w.ll.shape()), Tensor(w.ll.shape()), w.hh};
    CHECK(max_abs_diff(only_hh, haar_reconstruct(z)) < 1e-15);
}
