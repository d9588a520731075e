#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ndgan/error.hpp"
#include "ndgan/kernels.hpp"
#include "test_util.hpp"

using namespace ndgan;
using ndgan::testing::check_gradient;
using ndgan::testing::random_tensor;

namespace {

KernelSpec tiny_spec(const std::string& name = "tiny") {
    KernelSpec s;
    s.name = name;
    s.kind = "random";
    s.feature_dim = 6;
    s.native_size = 8;
    s.width = 3;
    s.seed = 5;
    return s;
}

Tensor embed_rows(EmbeddingKernel& k, const Tensor& images) { return k.embed(images); }

// Generator whose output does not depend on z: the to_rgb weights are zeroed.
Network constant_generator() {
    Network g(default_generator_spec(16, 8, 4), 1);
    auto params = g.params();
    params[params.size() - 2]->value.fill(0.0);
    return g;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = static_cast<double>(i);
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

}  // namespace

TEST_CASE("embedding is deterministic and resolution-agnostic") {
    EmbeddingKernel k(tiny_spec());
    const Tensor x = random_tensor({3, 3, 16, 16}, 1, 0.5);
    const Tensor a = embed_rows(k, x);
    CHECK(a.shape() == Shape{3, 6});
    CHECK(max_abs_diff(a, embed_rows(k, x)) == 0.0);
    for (std::size_t r : {8u, 32u, 64u}) CHECK(k.embed(random_tensor({2, 3, r, r}, r)).shape() == Shape{2, 6});
    CHECK_THROWS_AS(k.embed(Tensor({2, 1, 16, 16})), InputError);

    // B copies of one image give B identical rows.
    Tensor copies({4, 3, 16, 16});
    const Tensor one = random_tensor({1, 3, 16, 16}, 9);
    for (std::size_t i = 0; i < 4; ++i) std::copy(one.values().begin(), one.values().end(), copies.item(i).begin());
    const Tensor e = k.embed(copies);
    for (std::size_t i = 1; i < 4; ++i) CHECK(max_abs_diff(slice_batch(e, 0, 1), slice_batch(e, i, i + 1)) == 0.0);
}

TEST_CASE("image gradient through the kernel matches finite differences") {
    EmbeddingKernel k(tiny_spec());
    k.set_feature_scale(1.7);
    Tensor x = random_tensor({2, 3, 16, 16}, 2, 0.5);
    const Tensor w = random_tensor({2, 6}, 3);
    auto f = [&] {
        const Tensor e = k.embed(x);
        double s = 0.0;
        for (std::size_t i = 0; i < e.numel(); ++i) s += w[i] * e[i];
        return s;
    };
    zero_grads(k.params());
    k.embed(x);
    const Tensor g = k.backward(w);
    CHECK(check_gradient(f, x, g, 5).max_rel < 1e-5);
    for (Param* p : k.params()) CHECK(squared_norm(p->grad) == 0.0);
}

TEST_CASE("calibration yields unit total feature variance on data") {
    SyntheticMixture data({8, 0.05, 1.0, 4000, 16, 0});
    EmbeddingKernel k(tiny_spec());
    calibrate_feature_scale(k, data, 1000, 1);
    CHECK(k.feature_scale() > 0.0);
    // Independent estimate on different items.
    std::vector<std::size_t> idx(1500);
    std::iota(idx.begin(), idx.end(), 2000);
    const Tensor f = k.embed(data.batch(idx));
    double total = 0.0;
    for (std::size_t d = 0; d < 6; ++d) {
        double m = 0.0, v = 0.0;
        for (std::size_t i = 0; i < idx.size(); ++i) m += f[i * 6 + d];
        m /= static_cast<double>(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) v += (f[i * 6 + d] - m) * (f[i * 6 + d] - m);
        total += v / static_cast<double>(idx.size() - 1);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("classifier kernel learns the mixture modes") {
    SyntheticMixture data({8, 0.05, 1.0, 2000, 16, 0});
    KernelSpec spec = tiny_spec("clf");
    spec.kind = "classifier";
    spec.width = 8;
    spec.feature_dim = 16;
    spec.head_outputs = 10;
    EmbeddingKernel k(spec);
    const double acc = train_kernel(k, data, {150, 32, 2e-3, 0});
    CHECK(acc > 0.6);
}

TEST_CASE("kernel save/load reproduces embeddings") {
    EmbeddingKernel a(tiny_spec());
    a.set_feature_scale(0.3);
    Checkpoint ck;
    a.save(ck, "k");
    KernelSpec other = tiny_spec();
    other.seed = 99;
    EmbeddingKernel b(other);
    b.load(ck, "k");
    CHECK(b.feature_scale() == 0.3);
    const Tensor x = random_tensor({2, 3, 8, 8}, 4);
    CHECK(max_abs_diff(a.embed(x), b.embed(x)) == 0.0);
}

TEST_CASE("global features: constant source, single sample, halves") {
    EmbeddingKernel k(tiny_spec());
    const Tensor c = random_tensor({1, 3, 16, 16}, 6, 0.5);
    BatchSource constant = [&](std::uint64_t, std::size_t n) {
        Tensor t({n, 3, 16, 16});
        for (std::size_t i = 0; i < n; ++i) std::copy(c.values().begin(), c.values().end(), t.item(i).begin());
        return t;
    };
    const GlobalFeatureCache g = compute_global_features(k, constant, 100, 32);
    const Tensor ec = k.embed(c);
    for (std::size_t d = 0; d < 6; ++d) CHECK(g.mean_feature[d] == doctest::Approx(ec[d]).epsilon(1e-12));
    CHECK(g.num_samples == 100);

    SyntheticMixture data({8, 0.05, 1.0, 10000, 16, 2});
    const BatchSource src = dataset_source(data, 3);
    const GlobalFeatureCache single = compute_global_features(k, src, 1, 1);
    const Tensor e0 = k.embed(src(0, 1));
    for (std::size_t d = 0; d < 6; ++d) CHECK(single.mean_feature[d] == e0[d]);

    const GlobalFeatureCache full = compute_global_features(k, src, 10000, 500);
    BatchSource second = [&](std::uint64_t b, std::size_t n) { return src(b + 10, n); };
    const GlobalFeatureCache merged =
        merge_caches({compute_global_features(k, src, 5000, 500), compute_global_features(k, second, 5000, 500)});
    CHECK(merged.num_samples == 10000);
    for (std::size_t d = 0; d < 6; ++d) {
        CHECK(std::fabs(merged.mean_feature[d] - full.mean_feature[d]) <=
              1e-6 * std::max(1e-12, std::fabs(full.mean_feature[d])));
    }

    BatchSource bad = [](std::uint64_t, std::size_t n) { return Tensor({n, 3, 16, 16}, std::nan("")); };
    try {
        compute_global_features(k, bad, 4, 2);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("batch 0") != std::string::npos);
    }
}

TEST_CASE("streaming mean keeps precision over large offsets") {
    StreamingMean m(1);
    for (int i = 0; i < 100000; ++i) {
        const double v = 1e8 + (i % 2 ? 0.1 : -0.1);
        m.add(std::span<const double>(&v, 1));
    }
    CHECK(std::fabs(m.mean()[0] - 1e8) < 1e-7);
}

TEST_CASE("sampling error: exact reproduction, decay, degenerate generator") {
    EmbeddingKernel k(tiny_spec());
    Network g(default_generator_spec(16, 8, 4), 3);
    const GlobalFeatureCache ref = compute_global_features(k, g, 512, 128, 7);
    const auto same = estimate_sampling_error(k, g, {512}, 1, ref, 128, 7);
    CHECK(same[0].mean_error == 0.0);

    const GlobalFeatureCache big = compute_global_features(k, g, 16384, 256, 1000);
    const std::vector<std::size_t> sizes{16, 64, 256, 1024, 4096};
    const auto curve = estimate_sampling_error(k, g, sizes, 8, big, 256, 0);
    std::vector<double> ns, es;
    for (const auto& p : curve) {
        ns.push_back(static_cast<double>(p.n));
        es.push_back(p.mean_error);
    }
    CHECK(spearman(ns, es) < -0.9);

    Network flat = constant_generator();
    const GlobalFeatureCache fref = compute_global_features(k, flat, 256, 64, 11);
    for (const auto& p : estimate_sampling_error(k, flat, {8, 32, 128}, 2, fref, 64, 0)) {
        CHECK(p.mean_error == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
    }
}

TEST_CASE("log-log slope of a power law") {
    std::vector<SamplingErrorPoint> pts;
    for (std::size_t n : {256u, 1024u, 4096u, 16384u}) pts.push_back({n, 3.0 / std::sqrt(static_cast<double>(n)), 0.0});
    CHECK(loglog_slope(pts) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK_THROWS_AS(loglog_slope({pts[0]}), InputError);
}

TEST_CASE("global cache persistence") {
    const auto root = testing::scratch_dir("gcache");
    EmbeddingKernel k(tiny_spec());
    Network g(default_generator_spec(16, 8, 4), 3);
    const std::string hash(64, 'a');
    const GlobalFeatureCache c = load_or_compute_cache(root, k, g, hash, 64, 32, 0);
    const auto loaded = load_cache(root, "tiny", hash);
    REQUIRE(loaded.has_value());
    CHECK(loaded->mean_feature == c.mean_feature);
    CHECK(loaded->num_samples == 64);
    CHECK_FALSE(load_cache(root, "tiny", std::string(64, 'b')).has_value());
    CHECK_FALSE(load_cache(root, "other", hash).has_value());

    // A hit returns the stored copy; a different sample count recomputes.
    CHECK(load_or_compute_cache(root, k, g, hash, 64, 32, 0).created_at == c.created_at);
    CHECK(load_or_compute_cache(root, k, g, hash, 96, 32, 0).num_samples == 96);
}
