#include "doctest.h"

#include <cmath>

#include "ndgan/error.hpp"
#include "ndgan/nets.hpp"
#include "test_util.hpp"

using namespace ndgan;
using ndgan::testing::check_gradient;
using ndgan::testing::random_tensor;

namespace {

// Generator whose every hidden width is 64 (4 -> 8 -> 16 -> 32).
NetworkSpec uniform64_generator() {
    NetworkSpec s;
    s.kind = NetKind::generator;
    s.latent_dim = 64;
    s.resolution = 32;
    s.base_channels = 64;
    s.layers = {{BlockOp::dense, Resample::none, 64, 64, 4, 0},
                {BlockOp::conv, Resample::up, 64, 64, 8, 3},
                {BlockOp::conv, Resample::up, 64, 64, 16, 3},
                {BlockOp::conv, Resample::up, 64, 64, 32, 3},
                {BlockOp::to_rgb, Resample::none, 64, 3, 32, 3}};
    return s;
}

// Hand-written MAC count of uniform64_generator with widths round(64 m).
double uniform64_flops(double m) {
    const double w = std::max(1.0, std::floor(64.0 * m + 0.5));
    const double dense = 64.0 * w * 16.0;
    const double convs = 9.0 * w * w * (64.0 + 256.0 + 1024.0);
    const double rgb = 9.0 * w * 3.0 * 1024.0;
    return dense + convs + rgb;
}

}  // namespace

TEST_CASE("compression rate arithmetic") {
    CHECK(compression_rate(14.90e9, 1.38e9) == doctest::Approx(1.0 - 1.38 / 14.90));
    CHECK(compression_rate(14.90e9, 1.38e9) * 100.0 == doctest::Approx(90.74).epsilon(0.001));
    CHECK(compression_rate(14.90e9, 0.16e9) * 100.0 == doctest::Approx(98.93).epsilon(0.001));
    const NetworkSpec g = default_generator_spec();
    CHECK(*count_cost(g, &g).compression_rate == 0.0);
}

TEST_CASE("cost of a lone 3x3 conv 4->8 at 16x16") {
    NetworkSpec s;
    s.kind = NetKind::discriminator;
    s.resolution = 16;
    s.layers = {{BlockOp::conv, Resample::none, 4, 8, 16, 3}};
    const CostReport r = count_cost(s);
    CHECK(r.flops == 73728u);
    CHECK(r.params == 3u * 3u * 4u * 8u + 8u);
}

TEST_CASE("count_cost agrees with the instantiated layers") {
    for (const NetworkSpec& spec : {default_generator_spec(32, 64, 16), default_discriminator_spec(32, 16),
                                    prune_spec(default_generator_spec(32, 64, 32), 0.9)}) {
        Network net(spec, 0);
        CHECK(count_cost(spec).params == param_count(net.params()));
    }
}

TEST_CASE("pruning uniform width-64 generator to 75% lands near half width") {
    const NetworkSpec teacher = uniform64_generator();
    validate(teacher);
    const double tf = uniform64_flops(1.0);
    REQUIRE(static_cast<double>(count_cost(teacher).flops) == tf);

    // Brute-force oracle over every achievable width.
    double best_m = 1.0, best_gap = 1.0;
    for (int w = 1; w <= 64; ++w) {
        const double m = w / 64.0;
        const double gap = std::fabs(compression_rate(tf, uniform64_flops(m)) - 0.75);
        if (gap < best_gap) {
            best_gap = gap;
            best_m = m;
        }
    }
    const NetworkSpec student = prune_spec(teacher, 0.75);
    const double got_w = student.layers[1].out_ch;
    CHECK(got_w / 64.0 == doctest::Approx(best_m));
    CHECK(best_m == doctest::Approx(0.5).epsilon(0.05));
    CHECK(static_cast<double>(count_cost(student).flops) == uniform64_flops(best_m));
}

TEST_CASE("prune achieves targets within two points across the feasible range") {
    const NetworkSpec teacher = default_generator_spec(32, 64, 32);
    const double tf = static_cast<double>(count_cost(teacher).flops);
    for (double target = 0.5; target <= 0.99 + 1e-9; target += 0.035) {
        CAPTURE(target);
        const NetworkSpec s = prune_spec(teacher, target);
        validate(s);
        CHECK(std::fabs(compression_rate(tf, static_cast<double>(count_cost(s).flops)) - target) <= 0.02);
        CHECK(s.feature_taps == teacher.feature_taps);
    }
    const NetworkSpec near_identity = prune_spec(teacher, 1e-4);
    CHECK(near_identity.layers == teacher.layers);
}

TEST_CASE("pruning rejects out-of-range and unreachable targets") {
    const NetworkSpec teacher = default_generator_spec(32, 64, 32);
    CHECK_THROWS_AS(prune_spec(teacher, 0.0), ConfigError);
    CHECK_THROWS_AS(prune_spec(teacher, 1.0), ConfigError);
    // Width-1 floors cap how far a base-2 generator can shrink.
    CHECK_THROWS_AS(prune_spec(default_generator_spec(8, 4, 2), 0.99), InfeasibleError);
}

TEST_CASE("spec validation") {
    CHECK_THROWS_AS(default_generator_spec(24), ConfigError);
    NetworkSpec s = default_generator_spec();
    s.layers[2].in_ch += 1;
    CHECK_THROWS_AS(validate(s), ConfigError);
    s = default_discriminator_spec();
    s.feature_taps = {99};
    CHECK_THROWS_AS(validate(s), ConfigError);
}

TEST_CASE("netspec json round trip and hash") {
    const NetworkSpec g = prune_spec(default_generator_spec(32, 64, 32), 0.9);
    const auto j = to_json(g);
    CHECK(j.at("schema") == "netspec.v1");
    const NetworkSpec back = spec_from_json(j);
    CHECK(back == g);
    CHECK(spec_hash(back) == spec_hash(g));
    CHECK(spec_hash(g) != spec_hash(default_generator_spec(32, 64, 32)));
    auto bad = j;
    bad["schema"] = "netspec.v0";
    CHECK_THROWS_AS(spec_from_json(bad), ConfigError);
}

TEST_CASE("same spec and seed build identical parameters") {
    const NetworkSpec g = default_generator_spec(32, 64, 8);
    Network a(g, 0), b(g, 0), c(g, 1);
    auto pa = a.params(), pb = b.params(), pc = c.params();
    REQUIRE(pa.size() == pb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(max_abs_diff(pa[i]->value, pb[i]->value) == 0.0);
        any_diff |= max_abs_diff(pa[i]->value, pc[i]->value) > 0.0;
    }
    CHECK(any_diff);
}

TEST_CASE("generator and discriminator shape contracts") {
    Network g(default_generator_spec(32, 64, 8), 0);
    const Network::Output o = g.forward(random_tensor({3, 64}, 1));
    CHECK(o.out.shape() == Shape{3, 3, 32, 32});
    for (double v : o.out.values()) CHECK(std::fabs(v) <= 1.0);
    REQUIRE(o.taps.size() == 1);
    CHECK(o.taps[0].shape() == Shape{3, 8, 8, 8});

    // Two declared taps: shapes follow the layer list by hand.
    NetworkSpec ds = default_discriminator_spec(32, 8);
    ds.feature_taps = {1, 2};
    Network d(ds, 0);
    const Network::Output od = d.forward(o.out);
    CHECK(od.out.shape() == Shape{3, 1});
    REQUIRE(od.taps.size() == 2);
    CHECK(od.taps[0].shape() == Shape{3, 4, 16, 16});  // width 8 * 8 / 16
    CHECK(od.taps[1].shape() == Shape{3, 8, 8, 8});
    CHECK(d.tap_item_shape(0) == Shape{static_cast<std::size_t>(ds.layers[1].out_ch), 16, 16});
}

TEST_CASE("network backward matches finite differences, including tap gradients") {
    const NetworkSpec spec = default_generator_spec(8, 4, 3);
    Network g(spec, 3);
    Tensor z = random_tensor({2, 4}, 9);
    const Network::Output o0 = g.forward(z);
    const Tensor w = random_tensor(o0.out.shape(), 10);
    const Tensor wt = random_tensor(o0.taps[0].shape(), 11);
    auto f = [&] {
        const Network::Output o = g.forward(z);
        double s = 0.0;
        for (std::size_t i = 0; i < o.out.numel(); ++i) s += w[i] * o.out[i];
        for (std::size_t i = 0; i < o.taps[0].numel(); ++i) s += wt[i] * o.taps[0][i];
        return s;
    };
    g.zero_grad();
    g.forward(z);
    const std::vector<Tensor> tap_grads{wt};
    const Tensor gz = g.backward(w, tap_grads, true);
    CHECK(check_gradient(f, z, gz).max_rel < 1e-6);
    for (Param* p : g.params()) {
        CAPTURE(p->name);
        const Tensor analytic = p->grad;
        CHECK(check_gradient(f, p->value, analytic, 7).max_rel < 1e-5);
    }
}

TEST_CASE("init_from copies equal specs exactly and slices wider ones") {
    const NetworkSpec t = default_generator_spec(16, 8, 8);
    Network teacher(t, 1);
    Network same(t, 2);
    same.init_from(teacher);
    const Tensor z = random_tensor({2, 8}, 3);
    CHECK(max_abs_diff(teacher.forward(z).out, same.forward(z).out) == 0.0);

    const NetworkSpec s = scale_channels(t, 0.5);
    Network student(s, 4);
    student.init_from(teacher);
    // First conv weight is (out, in * 3 * 3); entry (out=1, in=1, tap 0)
    // sits at different flat offsets in the two networks.
    const Param* tw = teacher.params()[2];
    const Param* sw = student.params()[2];
    const std::size_t t_in = tw->value.dim(1) / 9, s_in = sw->value.dim(1) / 9;
    REQUIRE(s_in < t_in);
    CHECK(sw->value[0] == tw->value[0]);
    CHECK(sw->value[(1 * s_in + 1) * 9] == tw->value[(1 * t_in + 1) * 9]);
    CHECK_THROWS_AS(teacher.init_from(student), InputError);
}
