// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// writes acceptance.json into the work directory. Exit status is 0 only when
// every criterion passes.
//
//   acceptance --workdir DIR [--quick] [--reuse]
//
// --quick skips the two training-heavy criteria (7 and 8); --reuse keeps
// teachers already present in DIR instead of retraining them.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "knn_oracle.hpp"
#include "ndgan/checkpoint.hpp"
#include "ndgan/error.hpp"
#include "ndgan/losses.hpp"
#include "ndgan/metrics.hpp"
#include "ndgan/simd.hpp"
#include "ndgan/train.hpp"
#include "ndgan/wavelet.hpp"
#include "test_util.hpp"

using namespace ndgan;
using ndgan::testing::check_gradient;
using ndgan::testing::random_tensor;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
    bool skipped = false;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os.precision(digits);
    os << v;
    return os.str();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// -------------------------------------------------------- shared fixtures

// Desk teacher: 32x32 eight-mode mixture. Base 16 keeps the trend runs short;
// base 32 has enough channels to reach ~99% compression.
TrainConfig teacher_config(const fs::path& dir, int base) {
    TrainConfig c = default_train_config();
    c.output_dir = dir;
    c.base_channels = base;
    c.steps = 3000;
    c.lr_g = c.lr_d = 5e-4;
    c.eval_interval = 250;
    c.eval_samples = 1000;
    return c;
}

TrainConfig distill_config(const fs::path& dir, const fs::path& teacher, double rate, Method m, std::uint64_t seed) {
    TrainConfig c = default_train_config();
    c.output_dir = dir;
    c.teacher_checkpoint = teacher;
    c.target_compression = rate;
    c.method = m;
    c.seed = seed;
    c.steps = 800;
    c.lr_g = c.lr_d = c.lr_proj = 5e-4;
    c.global_samples = 4096;
    c.eval_interval = 100;
    c.eval_samples = 1000;
    return c;
}

fs::path ensure_teacher(const TrainConfig& cfg, bool reuse) {
    if (reuse && fs::exists(cfg.output_dir / "checkpoints" / "final" / "manifest.json")) return cfg.output_dir;
    fs::remove_all(cfg.output_dir);
    std::cerr << "training teacher " << cfg.output_dir.string() << "\n";
    train_teacher(cfg, &std::cerr);
    return cfg.output_dir;
}

// ---------------------------------------------------------------- criteria

Outcome compression_arithmetic() {
    const double a = 100.0 * compression_rate(14.90e9, 1.38e9);
    const double b = 100.0 * compression_rate(14.90e9, 0.16e9);
    return {std::fabs(a - 90.7) <= 0.1 && std::fabs(b - 98.9) <= 0.1, fmt(a) + "% and " + fmt(b) + "%"};
}

Outcome wavelet_suite() {
    const Tensor x = random_tensor({2, 3, 16, 16}, 1);
    const WaveletBands b = haar_decompose(x);
    const double recon = max_abs_diff(haar_reconstruct(b), x);
    const double band_energy = squared_norm(b.ll) + squared_norm(b.lh) + squared_norm(b.hl) + squared_norm(b.hh);
    const double energy = std::fabs(band_energy - squared_norm(x)) / squared_norm(x);

    const WaveletBands h = haar_decompose(Tensor({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
    const bool hand = h.ll[0] == 5.0 && h.lh[0] == -2.0 && h.hl[0] == -1.0 && h.hh[0] == 0.0;
    return {recon <= 1e-6 && energy <= 1e-5 && hand,
            "reconstruction " + fmt(recon) + ", energy " + fmt(energy) + ", hand case " + (hand ? "exact" : "wrong")};
}

KernelSpec tiny_kernel(const std::string& name, std::uint64_t seed) {
    KernelSpec s;
    s.name = name;
    s.feature_dim = 5;
    s.native_size = 8;
    s.width = 3;
    s.seed = seed;
    return s;
}

Outcome gradient_suite() {
    std::map<std::string, double> worst;
    EmbeddingKernel ka(tiny_kernel("a", 1)), kb(tiny_kernel("b", 2));
    GlobalFeatureCache ca;
    ca.kernel_name = "a";
    ca.mean_feature = {0.05, -0.02, 0.01, 0.03, -0.04};
    ca.num_samples = 1000;
    GlobalFeatureCache cb = ca;
    cb.kernel_name = "b";

    Tensor s = random_tensor({2, 3, 8, 8}, 10, 0.5);
    const Tensor t = random_tensor({2, 3, 8, 8}, 11, 0.5);
    for (DimeMode mode : {DimeMode::paired, DimeMode::global, DimeMode::both}) {
        const LossValue v = dime_loss(ka, s, &t, &ca, mode);
        auto f = [&] { return dime_loss(ka, s, &t, &ca, mode).value; };
        worst["dime_" + to_string(mode)] = check_gradient(f, s, v.grad, 2).max_rel;
    }

    {
        FeatureProjection proj({{3, 4, 4}}, {{2, 8, 8}}, 7);
        std::vector<Tensor> student{random_tensor({2, 3, 4, 4}, 20)};
        const std::vector<Tensor> teacher{random_tensor({2, 2, 8, 8}, 21)};
        zero_grads(proj.params());
        const NickelResult r = nickel_loss(teacher, student, proj, true);
        auto f = [&] { return nickel_loss(teacher, student, proj, false).value; };
        double w = check_gradient(f, student[0], r.tap_grads[0]).max_rel;
        for (Param* p : proj.params()) {
            const Tensor analytic = p->grad;
            w = std::max(w, check_gradient(f, p->value, analytic).max_rel);
        }
        worst["nickel"] = w;
    }

    Network dt(default_discriminator_spec(8, 2), 5), ds(default_discriminator_spec(8, 2), 6);
    const Tensor real = random_tensor({2, 3, 8, 8}, 8, 0.5);
    {
        Tensor fake = random_tensor({2, 3, 8, 8}, 7, 0.5);
        const GeneratorAdversarial g = generator_adversarial({&dt, &ds}, fake);
        auto f = [&] { return adversarial_losses(real, fake, dt, ds, 0.0).g_loss; };
        worst["adversarial_g"] = check_gradient(f, fake, g.grad).max_rel;
    }
    {
        const Tensor fake = random_tensor({2, 3, 8, 8}, 12, 0.5);
        ds.zero_grad();
        discriminator_backward(ds, real, fake, 0.7, 1.0);
        auto f = [&] { return adversarial_losses(real, fake, dt, ds, 0.7).ds_loss; };
        double w = 0.0;
        for (Param* p : ds.params()) {
            const Tensor analytic = p->grad;
            w = std::max(w, check_gradient(f, p->value, analytic, 3).max_rel);
        }
        worst["adversarial_d_r1"] = w;
    }
    {
        const LossWeights lw;
        Tensor fake = random_tensor({2, 3, 8, 8}, 19, 0.5);
        auto total = [&](Tensor* grad) {
            const GeneratorAdversarial adv = generator_adversarial({&dt, &ds}, fake);
            const LossValue a = dime_loss(ka, fake, &t, &ca, DimeMode::both);
            const LossValue b = dime_loss(kb, fake, nullptr, &cb, DimeMode::global);
            if (grad) {
                *grad = adv.grad;
                simd::axpy(lw.lambda_kernel_a, a.grad.span(), grad->span());
                simd::axpy(lw.lambda_kernel_b, b.grad.span(), grad->span());
            }
            return total_loss({adv.terms[0], adv.terms[1], a.value, b.value, 0.0}, lw).total;
        };
        Tensor grad;
        total(&grad);
        auto f = [&] { return total(nullptr); };
        worst["total"] = check_gradient(f, fake, grad, 2).max_rel;
    }

    double max_rel = 0.0;
    std::string detail;
    for (const auto& [name, v] : worst) {
        max_rel = std::max(max_rel, v);
        detail += (detail.empty() ? "" : ", ") + name + " " + fmt(v, 2);
    }
    return {max_rel < 1e-4, "max relative error " + fmt(max_rel, 2) + " (" + detail + ")"};
}

Outcome metric_oracles() {
    auto stats = [](std::vector<double> m, std::vector<double> c) {
        FeatureStats s;
        s.mean = std::move(m);
        s.covariance = std::move(c);
        s.n = 100;
        return s;
    };
    const double f1 = fid(stats({0}, {1}), stats({1}, {1}));
    const double f2 = fid(stats({0}, {1}), stats({0}, {4}));
    const double f3 = fid(stats({0, 0}, {1, 0, 0, 1}), stats({1, 1}, {1, 0, 0, 1}));
    const bool closed = std::fabs(f1 - 1.0) <= 1e-6 && std::fabs(f2 - 1.0) <= 1e-6 && std::fabs(f3 - 2.0) <= 1e-6;

    int mismatches = 0, cases = 0;
    auto same = [](const KnnMetrics& a, const testing::Brute& b) {
        return a.pr.precision == b.precision && a.pr.recall == b.recall && a.dc.density == b.density &&
               a.dc.coverage == b.coverage;
    };
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        for (int k : {1, 3, 5}) {
            const Tensor r = testing::integer_points(20 + 3 * seed, 3, seed);
            const Tensor f = testing::integer_points(50 - 2 * seed, 3, seed + 100);
            const Tensor gr = random_tensor({30, 4}, seed), gf = random_tensor({45, 4}, seed + 7, 1.3);
            mismatches += !same(knn_metrics(r, f, k), testing::brute(r, f, k));
            mismatches += !same(knn_metrics(gr, gf, k), testing::brute(gr, gf, k));
            cases += 2;
        }
    }

    const Tensor r = random_tensor({40, 3}, 8), f = random_tensor({35, 3}, 9, 1.2);
    const KnnMetrics base = knn_metrics(r, f, 4);
    const double fid0 = fid(feature_stats(r), feature_stats(f));
    bool invariant = true;
    for (const auto& [pr, pf] : {std::pair{testing::permute_rows(r, 3), testing::permute_rows(f, 4)},
                                 std::pair{testing::isometry(r), testing::isometry(f)}}) {
        const KnnMetrics m = knn_metrics(pr, pf, 4);
        invariant = invariant && m.pr.precision == base.pr.precision && m.pr.recall == base.pr.recall &&
                    m.dc.density == base.dc.density && m.dc.coverage == base.dc.coverage;
        invariant = invariant && std::fabs(fid(feature_stats(pr), feature_stats(pf)) - fid0) <= 1e-9 * fid0;
    }
    return {closed && mismatches == 0 && invariant,
            "FID cases " + fmt(f1, 10) + ", " + fmt(f2, 10) + ", " + fmt(f3, 10) + "; brute force " +
                std::to_string(cases - mismatches) + "/" + std::to_string(cases) + " exact; invariance " +
                (invariant ? "holds" : "broken")};
}

Outcome sampling_error_law(const fs::path& teacher) {
    TeacherBundle t = load_teacher(teacher);
    EmbeddingKernel& k = *t.kernels.at(0);
    const GlobalFeatureCache ref = compute_global_features(k, *t.g, 131072, 256, 1000003);
    const auto curve = estimate_sampling_error(k, *t.g, {256, 1024, 4096, 16384}, 5, ref, 256, 0);
    const double slope = loglog_slope(curve);
    std::string pts;
    for (const auto& p : curve) pts += " N=" + std::to_string(p.n) + ":" + fmt(p.mean_error, 3);
    return {slope >= -0.7 && slope <= -0.3, "slope " + fmt(slope) + " (" + k.name() + ";" + pts + ")"};
}

Outcome identity_distillation(const fs::path& teacher, const fs::path& work) {
    TeacherBundle t = load_teacher(teacher);
    TrainConfig cfg = distill_config(work / "identity", teacher, 0.0, Method::nickel_dime, 0);
    cfg.dime_mode = DimeMode::paired;
    auto data = make_dataset(t.dataset, default_cache_root());
    DistillSession s(cfg, t, data, default_cache_root());
    const double da = s.paired_dime(0, 0), db = s.paired_dime(1, 0);
    const double f = evaluate_generators(*t.g, s.student(), *t.metrics_kernel, 2000, 5, 1).fid;
    return {da == 0.0 && db == 0.0 && f < 0.5,
            "paired DiME " + fmt(da) + " / " + fmt(db) + ", FID(teacher, student) " + fmt(f)};
}

struct RunSummary {
    double fid = 0.0;
    double drift = 0.0;
    bool diverged = false;
    std::string error;
};

RunSummary run_distill(const TrainConfig& cfg) {
    fs::remove_all(cfg.output_dir);
    RunSummary out;
    std::cerr << "distill " << cfg.output_dir.filename().string() << "\n";
    try {
        distill(cfg, nullptr);
    } catch (const DivergenceError& e) {
        out.diverged = true;
        out.error = e.what();
    }
    out.fid = summarize_best_fid(cfg.output_dir, 5);
    out.drift = track_stability(read_stability(cfg.output_dir)).drift;
    return out;
}

Outcome trend(const fs::path& teacher, const fs::path& work, json& record) {
    std::map<std::string, std::vector<double>> fids, drifts;
    for (Method m : {Method::nickel_dime, Method::dime, Method::adv_only}) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const std::string name = "trend_" + to_string(m) + "_" + std::to_string(seed);
            const RunSummary r = run_distill(distill_config(work / name, teacher, 0.9, m, seed));
            fids[to_string(m)].push_back(r.fid);
            drifts[to_string(m)].push_back(r.drift);
            record[name] = {{"fid_best5", r.fid}, {"drift", r.drift}, {"diverged", r.diverged}};
        }
    }
    const double nd = median(fids["nickel-dime"]), di = median(fids["dime"]), adv = median(fids["adv-only"]);
    const double drift_nd = median(drifts["nickel-dime"]), drift_adv = median(drifts["adv-only"]);
    const bool order = nd <= di && di <= adv;
    const bool drift = drift_nd < drift_adv;
    return {order && drift, "median FID nickel-dime " + fmt(nd) + ", dime " + fmt(di) + ", adv-only " + fmt(adv) +
                                "; drift nickel-dime " + fmt(drift_nd) + " vs adv-only " + fmt(drift_adv)};
}

Outcome extreme(const fs::path& teacher, const fs::path& work, json& record) {
    const RunSummary nd = run_distill(distill_config(work / "extreme_nickel-dime", teacher, 0.99, Method::nickel_dime, 0));
    const RunSummary adv = run_distill(distill_config(work / "extreme_adv-only", teacher, 0.99, Method::adv_only, 0));
    const double rate = load_checkpoint(*latest_checkpoint(work / "extreme_nickel-dime")).meta.at("compression").get<double>();
    record["extreme"] = {{"compression", rate},
                         {"nickel-dime", {{"fid_best5", nd.fid}, {"diverged", nd.diverged}}},
                         {"adv-only", {{"fid_best5", adv.fid}, {"diverged", adv.diverged}}}};
    return {!nd.diverged, "compression " + fmt(100.0 * rate) + "%; nickel-dime " +
                              (nd.diverged ? "diverged" : "completed") + " (FID " + fmt(nd.fid) + "), adv-only " +
                              (adv.diverged ? "diverged" : "completed") + " (FID " + fmt(adv.fid) + ")"};
}

Outcome reproducibility(const fs::path& work) {
    auto short_teacher = [&](const std::string& name) {
        TrainConfig c = teacher_config(work / name, 8);
        c.steps = 120;
        c.eval_interval = 60;
        c.eval_samples = 300;
        c.kernel_train.steps = 60;
        fs::remove_all(c.output_dir);
        return train_teacher(c).checkpoint_hash;
    };
    const std::string ta = short_teacher("repro_teacher_a"), tb = short_teacher("repro_teacher_b");

    auto short_student = [&](const std::string& name) {
        TrainConfig c = distill_config(work / name, work / "repro_teacher_a", 0.5, Method::nickel_dime, 3);
        c.steps = 60;
        c.eval_interval = 30;
        c.eval_samples = 300;
        c.global_samples = 512;
        fs::remove_all(c.output_dir);
        return distill(c).checkpoint_hash;
    };
    const std::string sa = short_student("repro_student_a"), sb = short_student("repro_student_b");

    auto report = [&] {
        const Checkpoint ck = load_checkpoint(work / "repro_student_a" / "checkpoints" / "final");
        auto g = load_generator(ck);
        auto k = load_metrics_kernel(ck);
        auto data = make_dataset(dataset_config_from_json(ck.meta.at("dataset")), default_cache_root());
        return to_json(evaluate_pair(*g, *data, *k, 500, 5, 7)).dump();
    };
    const bool same_report = report() == report();
    return {ta == tb && sa == sb && same_report, std::string("teacher hashes ") + (ta == tb ? "equal" : "differ") +
                                                     ", student hashes " + (sa == sb ? "equal" : "differ") +
                                                     ", metric reports " + (same_report ? "equal" : "differ")};
}

// A mode counts as covered when at least 1% of samples decode within 3 sigma
// of its center.
Outcome mode_coverage(const fs::path& teacher) {
    TeacherBundle t = load_teacher(teacher);
    MixtureConfig mc;
    mc.n_modes = t.dataset.n_modes;
    mc.std = t.dataset.std;
    mc.size = 16;
    mc.resolution = t.dataset.resolution;
    const SyntheticMixture mix(mc);
    const std::size_t n = 2000;
    std::vector<int> counts(static_cast<std::size_t>(mc.n_modes), 0);
    for (std::size_t start = 0; start < n; start += 250) {
        const Tensor z = sample_latents(static_cast<std::size_t>(t.g->spec().latent_dim), 250, 5, "modes", start / 250);
        const Tensor imgs = t.g->forward(z).out;
        for (std::size_t i = 0; i < imgs.dim(0); ++i) {
            if (auto k = mix.assign_mode(mix.decode(imgs.item(i)))) ++counts[static_cast<std::size_t>(*k)];
        }
    }
    int covered = 0;
    std::string detail;
    for (int c : counts) {
        covered += c >= static_cast<int>(n / 100);
        detail += " " + std::to_string(c);
    }
    return {covered >= 7, std::to_string(covered) + "/" + std::to_string(mc.n_modes) + " modes (counts" + detail + ")"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string workdir = "acceptance_runs";
    bool quick = false, reuse = false;
    app.add_option("--workdir", workdir, "Scratch directory for trained models");
    app.add_flag("--quick", quick, "Skip the training-heavy trend and extreme-compression criteria");
    app.add_flag("--reuse", reuse, "Reuse teachers already trained in the work directory");
    CLI11_PARSE(app, argc, argv);

    const fs::path work = fs::absolute(workdir);
    fs::create_directories(work);
    setenv("NDGAN_CACHE", (work / "cache").c_str(), 1);

    json record = json::object();
    int failures = 0;
    auto report = [&](int id, const std::string& name, const std::function<Outcome()>& body) {
        Outcome o;
        try {
            o = body();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const std::string status = o.skipped ? "SKIP" : o.pass ? "PASS" : "FAIL";
        if (!o.skipped && !o.pass) ++failures;
        std::cout << "criterion " << id << " " << status << " " << name << ": " << o.detail << std::endl;
        record["criteria"][std::to_string(id)] = {{"name", name}, {"status", status}, {"detail", o.detail}};
    };

    report(1, "compression arithmetic", compression_arithmetic);
    report(2, "wavelet suite", wavelet_suite);
    report(3, "gradient suite", gradient_suite);
    report(4, "metric oracles", metric_oracles);

    fs::path t16;
    try {
        t16 = ensure_teacher(teacher_config(work / "teacher_b16", 16), reuse);
    } catch (const std::exception& e) {
        std::cerr << "teacher training failed: " << e.what() << "\n";
    }
    report(5, "sampling-error law", [&] { return sampling_error_law(t16); });
    report(6, "identity distillation", [&] { return identity_distillation(t16, work); });
    report(7, "trend at ~90% compression", [&] {
        if (quick) return Outcome{false, "skipped (--quick)", true};
        return trend(t16, work, record["runs"]);
    });
    report(8, "stability at ~99% compression", [&] {
        if (quick) return Outcome{false, "skipped (--quick)", true};
        const fs::path t32 = ensure_teacher(teacher_config(work / "teacher_b32", 32), reuse);
        return extreme(t32, work, record["runs"]);
    });
    report(9, "reproducibility", [&] { return reproducibility(work); });

    const Outcome modes = [&] {
        try {
            return mode_coverage(t16);
        } catch (const std::exception& e) {
            return Outcome{false, std::string("error: ") + e.what()};
        }
    }();
    std::cout << "supplementary " << (modes.pass ? "PASS" : "FAIL") << " teacher mode coverage: " << modes.detail
              << std::endl;
    record["teacher_mode_coverage"] = {{"pass", modes.pass}, {"detail", modes.detail}};
    failures += !modes.pass;

    std::ofstream(work / "acceptance.json") << record.dump(2) << "\n";
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " check(s) failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
