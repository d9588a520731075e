#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"

#include "ndgan/error.hpp"
#include "ndgan/hash.hpp"
#include "ndgan/kernels.hpp"
#include "ndgan/metrics.hpp"
#include "ndgan/nets.hpp"
#include "ndgan/train.hpp"
#include "svg_plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ndgan::cli {
namespace {

struct Common {
    bool dry_run = false;
    std::string seed;  // empty: keep config; "auto": ambient entropy
    std::optional<int> steps;
    std::string output;
    bool resume = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_flag("--dry-run", c.dry_run, "Validate the config and print resolved defaults without running");
    cmd->add_option("--seed", c.seed, "Override the seed (integer or 'auto')");
    cmd->add_option("--steps", c.steps, "Override the number of training steps");
    cmd->add_option("--output", c.output, "Override the run directory");
    cmd->add_flag("--resume", c.resume, "Continue from the newest checkpoint in the run directory");
}

std::uint64_t parse_seed(const std::string& s) {
    if (s == "auto") return (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
    try {
        std::size_t pos = 0;
        const auto v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("--seed must be a non-negative integer or 'auto', got '" + s + "'");
    }
}

void apply_common(TrainConfig& cfg, const Common& c) {
    if (!c.seed.empty()) cfg.seed = parse_seed(c.seed);
    if (c.steps) cfg.steps = *c.steps;
    if (!c.output.empty()) cfg.output_dir = c.output;
    if (c.resume) cfg.resume = true;
    cfg.validate();
}

TrainConfig read_config(const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
    return load_train_config(path);
}

// Runs `body` between a "running" manifest and its finalized form.
template <typename Body>
void with_manifest(const std::string& command, const TrainConfig& cfg, json input_hashes, Body body,
                   std::ostream& out) {
    ExperimentManifest m;
    m.command = command;
    m.config = to_json(cfg);
    m.seed = cfg.seed;
    m.started_at = utc_timestamp();
    m.input_hashes = std::move(input_hashes);
    const fs::path path = cfg.output_dir / "experiment.json";
    write_manifest(path, m);
    try {
        const RunResult r = body();
        m.artifacts = {r.checkpoint.string(), (cfg.output_dir / "log.jsonl").string(),
                       (cfg.output_dir / "metrics.jsonl").string(), (cfg.output_dir / "config.json").string()};
        m.status = "ok";
        m.finished_at = utc_timestamp();
        m.input_hashes["output_checkpoint"] = r.checkpoint_hash;
        write_manifest(path, m);
        out << "checkpoint: " << r.checkpoint.string() << "\n";
        out << "checkpoint_hash: " << r.checkpoint_hash << "\n";
        if (r.final_fid) out << "final_fid: " << *r.final_fid << "\n";
        out << "manifest: " << path.string() << "\n";
    } catch (const std::exception& e) {
        m.status = "failed";
        m.error = e.what();
        m.finished_at = utc_timestamp();
        if (auto latest = latest_checkpoint(cfg.output_dir)) m.artifacts = {latest->string()};
        write_manifest(path, m);
        throw;
    }
}

// ------------------------------------------------------------- commands

int cmd_train_teacher(const std::string& config_path, const Common& common, std::ostream& out, std::ostream& err) {
    TrainConfig cfg = read_config(config_path);
    apply_common(cfg, common);
    if (common.dry_run) {
        out << to_json(cfg).dump(2) << "\n";
        return kExitOk;
    }
    json hashes = {{"config", sha256_file(config_path)}};
    with_manifest("train-teacher", cfg, hashes, [&] { return train_teacher(cfg, &err); }, out);
    return kExitOk;
}

int cmd_distill(const std::string& config_path, const Common& common, const std::string& method,
                std::optional<double> compression, const std::string& teacher, const std::string& dime_mode,
                std::ostream& out, std::ostream& err) {
    TrainConfig cfg = read_config(config_path);
    if (!method.empty()) cfg.method = method_from_string(method);
    if (compression) cfg.target_compression = *compression;
    if (!teacher.empty()) cfg.teacher_checkpoint = teacher;
    if (!dime_mode.empty()) cfg.dime_mode = dime_mode_from_string(dime_mode);
    apply_common(cfg, common);
    if (cfg.teacher_checkpoint.empty()) throw ConfigError("distill: no teacher checkpoint (set teacher_checkpoint or --teacher)");
    const fs::path teacher_dir = resolve_checkpoint(cfg.teacher_checkpoint);
    if (common.dry_run) {
        const Checkpoint t = load_checkpoint(teacher_dir);
        const NetworkSpec tspec = spec_from_json(t.meta.at("g_spec"));
        const NetworkSpec sspec = cfg.target_compression > 0 ? prune_spec(tspec, cfg.target_compression) : tspec;
        json j = to_json(cfg);
        j["resolved"] = {{"weights", to_json(apply_method(cfg.weights, cfg.method))},
                         {"achieved_compression", *count_cost(sspec, &tspec).compression_rate}};
        out << j.dump(2) << "\n";
        return kExitOk;
    }
    json hashes = {{"config", sha256_file(config_path)}, {"teacher_checkpoint", checkpoint_hash(teacher_dir)}};
    with_manifest(
        "distill", cfg, hashes,
        [&] {
            RunResult r = distill(cfg, &err);
            out << "achieved_compression: " << r.compression << "\n";
            return r;
        },
        out);
    return kExitOk;
}

int cmd_prune(const std::string& teacher, const std::string& netspec, double target, double tolerance,
              const std::string& out_path, std::ostream& out) {
    NetworkSpec tspec;
    if (!netspec.empty()) {
        std::ifstream is(netspec);
        if (!is) throw ConfigError("netspec not found: " + netspec);
        json j;
        is >> j;
        tspec = spec_from_json(j);
    } else if (!teacher.empty()) {
        tspec = spec_from_json(load_checkpoint(resolve_checkpoint(teacher)).meta.at("g_spec"));
    } else {
        tspec = default_generator_spec();
    }
    const NetworkSpec sspec = prune_spec(tspec, target, tolerance);
    const CostReport tc = count_cost(tspec);
    const CostReport sc = count_cost(sspec, &tspec);
    json report = {{"target", target},
                   {"achieved", *sc.compression_rate},
                   {"channel_multiplier", sspec.channel_multiplier},
                   {"teacher", {{"flops", tc.flops}, {"params", tc.params}}},
                   {"student", {{"flops", sc.flops}, {"params", sc.params}}}};
    if (!out_path.empty()) {
        std::ofstream(out_path) << to_json(sspec).dump(2) << "\n";
        report["netspec"] = out_path;
    }
    out << report.dump(2) << "\n";
    return kExitOk;
}

std::vector<fs::path> run_checkpoints(const fs::path& run_dir) {
    std::vector<fs::path> out;
    const fs::path dir = run_dir / "checkpoints";
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_directory() && fs::exists(e.path() / "manifest.json")) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

int cmd_evaluate(const std::string& target, std::size_t n, int k, std::uint64_t seed, const std::string& out_dir,
                 const std::string& dataset_folder, const std::string& summarize, std::ostream& out) {
    if (!summarize.empty()) {
        if (!fs::is_directory(summarize)) throw ConfigError("run directory not found: " + summarize);
        const double v = summarize_best_fid(summarize, 5);
        out << "mean_of_5_best_fid: " << v << "\n";
        return kExitOk;
    }
    if (target.empty()) throw ConfigError("evaluate: give a checkpoint/run directory or --summarize");
    if (!fs::exists(target)) throw ConfigError("checkpoint not found: " + target);
    std::vector<fs::path> ckpts;
    const bool is_run = !fs::exists(fs::path(target) / "manifest.json");
    if (is_run) {
        ckpts = run_checkpoints(target);
        if (ckpts.empty()) throw ConfigError("no checkpoints under " + target);
    } else {
        ckpts = {fs::path(target)};
    }
    fs::path dest = out_dir.empty() ? (is_run ? fs::path(target) / "eval" : fs::path()) : fs::path(out_dir);
    if (!dest.empty()) fs::create_directories(dest / "reports");
    const fs::path cache_root = default_cache_root();
    std::map<std::string, std::shared_ptr<ImageDataset>> datasets;
    std::string csv = csv_header() + "\n";
    for (const auto& path : ckpts) {
        const Checkpoint ck = load_checkpoint(path);
        auto g = load_generator(ck);
        auto kernel = load_metrics_kernel(ck);
        DatasetConfig dc = dataset_config_from_json(ck.meta.at("dataset"));
        if (!dataset_folder.empty()) {
            dc.kind = "folder";
            dc.path = dataset_folder;
        }
        const std::string key = to_json(dc).dump();
        if (!datasets.count(key)) datasets[key] = make_dataset(dc, cache_root);
        const MetricReport r = evaluate_pair(*g, *datasets[key], *kernel, n, k, seed);
        const std::string label = path.filename().string();
        json j = to_json(r);
        j["checkpoint"] = path.string();
        j["checkpoint_hash"] = checkpoint_hash(path);
        if (!dest.empty()) std::ofstream(dest / "reports" / (label + ".json")) << j.dump(2) << "\n";
        csv += csv_row(label, r) + "\n";
        out << j.dump() << "\n";
    }
    if (!dest.empty()) {
        std::ofstream(dest / "summary.csv") << csv;
        ExperimentManifest m;
        m.command = "evaluate";
        m.config = {{"target", target}, {"n", n}, {"k", k}, {"dataset_folder", dataset_folder}};
        m.seed = seed;
        m.started_at = m.finished_at = utc_timestamp();
        m.status = "ok";
        m.artifacts = {(dest / "summary.csv").string(), (dest / "reports").string()};
        write_manifest(dest / "experiment.json", m);
        out << "summary: " << (dest / "summary.csv").string() << "\n";
    }
    return kExitOk;
}

int cmd_diagnose(const std::vector<std::string>& runs, const std::string& sampling_ckpt, const std::vector<std::size_t>& sizes,
                 int trials, std::ostream& out) {
    if (runs.empty() && sampling_ckpt.empty()) throw ConfigError("diagnose: give run directories or --sampling-error");
    json report = json::object();
    for (const auto& run : runs) {
        if (!fs::exists(fs::path(run) / "log.jsonl")) throw ConfigError("no log.jsonl in " + run);
        const StabilitySummary s = track_stability(read_stability(run));
        json j = {{"drift", s.drift}, {"window", s.window}, {"records", s.records.size()}};
        if (fs::exists(fs::path(run) / "metrics.jsonl")) {
            std::vector<double> fids;
            for (const auto& r : read_jsonl(fs::path(run) / "metrics.jsonl")) fids.push_back(r.at("fid").get<double>());
            if (!fids.empty()) {
                j["final_fid"] = fids.back();
                j["best_fid"] = *std::min_element(fids.begin(), fids.end());
                j["mean_of_5_best_fid"] = summarize_best_fid(run, 5);
            }
        }
        report[run] = j;
    }
    if (!sampling_ckpt.empty()) {
        TeacherBundle t = load_teacher(sampling_ckpt);
        if (t.kernels.empty()) throw ConfigError("diagnose: teacher has no embedding kernels");
        json curves = json::object();
        for (auto& kernel : t.kernels) {
            const std::size_t ref_n = 4 * *std::max_element(sizes.begin(), sizes.end());
            const GlobalFeatureCache ref = compute_global_features(*kernel, *t.g, ref_n, 256, 1000003);
            const auto curve = estimate_sampling_error(*kernel, *t.g, sizes, trials, ref, 256, 0);
            json pts = json::array();
            for (const auto& p : curve) pts.push_back({{"n", p.n}, {"mean_error", p.mean_error}, {"std_error", p.std_error}});
            curves[kernel->name()] = {{"points", pts}, {"loglog_slope", loglog_slope(curve)}};
        }
        report["sampling_error"] = curves;
    }
    out << report.dump(2) << "\n";
    return kExitOk;
}

struct RunData {
    std::string label;
    std::string method;
    double compression = 0.0;
    std::vector<double> fid_steps, fids, logit_steps, fake_logits;
};

std::optional<RunData> load_run(const fs::path& dir) {
    if (!fs::exists(dir / "metrics.jsonl") && !fs::exists(dir / "log.jsonl")) return std::nullopt;
    RunData r;
    r.label = dir.filename().string();
    if (r.label.empty()) r.label = dir.parent_path().filename().string();
    r.method = "teacher";
    if (auto latest = latest_checkpoint(dir)) {
        const json meta = load_checkpoint(*latest).meta;
        if (meta.value("role", std::string()) == "student") {
            r.method = meta.value("method", std::string("student"));
            r.compression = meta.value("compression", 0.0);
        }
    }
    if (fs::exists(dir / "metrics.jsonl")) {
        for (const auto& m : read_jsonl(dir / "metrics.jsonl")) {
            r.fid_steps.push_back(m.at("step").get<double>());
            r.fids.push_back(m.at("fid").get<double>());
        }
    }
    if (fs::exists(dir / "log.jsonl")) {
        for (const auto& s : read_jsonl(dir / "log.jsonl")) {
            r.logit_steps.push_back(s.at("step").get<double>());
            r.fake_logits.push_back(s.at("fake_logit").get<double>());
        }
    }
    return r;
}

std::vector<double> moving_average(const std::vector<double>& v, std::size_t w) {
    std::vector<double> out(v.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        acc += v[i];
        if (i >= w) acc -= v[i - w];
        out[i] = acc / static_cast<double>(std::min(i + 1, w));
    }
    return out;
}

int cmd_plot(const std::vector<std::string>& run_dirs, const std::string& out_dir, const std::vector<std::string>& grids,
             std::uint64_t grid_seed, int grid_count, std::ostream& out) {
    std::vector<RunData> runs;
    for (const auto& d : run_dirs) {
        if (auto r = load_run(d)) runs.push_back(std::move(*r));
    }
    if (runs.empty() && grids.empty()) throw ConfigError("plot: no valid runs");
    fs::create_directories(out_dir);
    std::map<std::string, int> label_count;
    for (const auto& r : runs) ++label_count[r.method];
    auto label_of = [&](const RunData& r) {
        return label_count[r.method] > 1 ? r.method + " (" + r.label + ")" : r.method;
    };
    std::vector<std::string> written;
    if (!runs.empty()) {
        plot::Chart conv{"FID convergence", "training step", "FID", {}, std::nullopt, ""};
        plot::Chart stab{"Discriminator logits on generated images", "training step", "mean fake logit", {}, 0.0,
                         "ideal equilibrium"};
        for (const auto& r : runs) {
            if (!r.fids.empty()) conv.series.push_back({label_of(r), r.fid_steps, r.fids, true});
            if (!r.fake_logits.empty()) {
                stab.series.push_back({label_of(r), r.logit_steps, moving_average(r.fake_logits, 25), false});
            }
        }
        if (!conv.series.empty()) {
            plot::write_svg(fs::path(out_dir) / "convergence.svg", conv);
            written.push_back((fs::path(out_dir) / "convergence.svg").string());
        }
        if (!stab.series.empty()) {
            plot::write_svg(fs::path(out_dir) / "stability.svg", stab);
            written.push_back((fs::path(out_dir) / "stability.svg").string());
        }
        std::map<std::string, std::map<double, double>> by_method;
        for (const auto& r : runs) {
            if (r.method == "teacher" || r.fids.empty()) continue;
            const double best = *std::min_element(r.fids.begin(), r.fids.end());
            auto& slot = by_method[r.method];
            slot[r.compression] = slot.count(r.compression) ? std::min(slot[r.compression], best) : best;
        }
        std::set<double> rates;
        for (const auto& [_, m] : by_method) {
            for (const auto& [rate, __] : m) rates.insert(rate);
        }
        if (rates.size() >= 2) {
            plot::Chart comp{"Best FID vs compression rate", "FLOPs compression rate", "best FID", {}, std::nullopt, ""};
            for (const auto& [method, m] : by_method) {
                plot::Series s{method, {}, {}, true};
                for (const auto& [rate, f] : m) {
                    s.x.push_back(rate);
                    s.y.push_back(f);
                }
                comp.series.push_back(s);
            }
            plot::write_svg(fs::path(out_dir) / "compression.svg", comp);
            written.push_back((fs::path(out_dir) / "compression.svg").string());
        }
    }
    for (const auto& g : grids) {
        const fs::path ckdir = resolve_checkpoint(g);
        const Checkpoint ck = load_checkpoint(ckdir);
        auto gen = load_generator(ck);
        const Tensor z = sample_latents(static_cast<std::size_t>(gen->spec().latent_dim),
                                        static_cast<std::size_t>(grid_count), grid_seed, "grid");
        const Tensor images = gen->forward(z).out;
        std::string name = ckdir.parent_path().parent_path().filename().string() + "_" + ckdir.filename().string();
        const fs::path png = fs::path(out_dir) / ("samples_" + name + ".png");
        write_image_grid(png, images, std::min(grid_count, 8));
        written.push_back(png.string());
    }
    for (const auto& w : written) out << w << "\n";
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Desk-scale GAN compression: teacher training, pruning, dual distillation, evaluation, plots"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kCodeVersion);

    std::string config_path;
    Common common;

    auto* teacher_cmd = app.add_subcommand("train-teacher", "Train the teacher GAN and its embedding kernels");
    teacher_cmd->add_option("config", config_path, "Config file (schema ndgan.v1)")->required();
    add_common(teacher_cmd, common);

    std::string method, teacher, dime_mode;
    std::optional<double> compression;
    auto* distill_cmd = app.add_subcommand("distill", "Distill a pruned student from a teacher");
    distill_cmd->add_option("config", config_path, "Config file (schema ndgan.v1)")->required();
    distill_cmd->add_option("--method", method, "dime | nickel | nickel-dime | adv-only");
    distill_cmd->add_option("--compression", compression, "Target FLOPs compression rate in (0, 1)");
    distill_cmd->add_option("--teacher", teacher, "Teacher checkpoint or run directory");
    distill_cmd->add_option("--dime-mode", dime_mode, "paired | global | both");
    add_common(distill_cmd, common);

    std::string prune_teacher, prune_netspec, prune_out;
    double prune_target = 0.0, prune_tol = 0.02;
    auto* prune_cmd = app.add_subcommand("prune", "Compute a uniformly pruned student netspec");
    prune_cmd->add_option("--teacher", prune_teacher, "Teacher checkpoint (default: built-in generator spec)");
    prune_cmd->add_option("--netspec", prune_netspec, "Teacher netspec.v1 file");
    prune_cmd->add_option("--target", prune_target, "Target FLOPs compression rate")->required();
    prune_cmd->add_option("--tolerance", prune_tol, "Allowed miss of the target");
    prune_cmd->add_option("--out", prune_out, "Write the student netspec here");

    std::string eval_target, eval_out, eval_folder, eval_summarize;
    std::size_t eval_n = 10000;
    int eval_k = 5;
    std::uint64_t eval_seed = 0;
    auto* eval_cmd = app.add_subcommand("evaluate", "Compute FID / precision / recall / density / coverage");
    eval_cmd->add_option("checkpoint", eval_target, "Checkpoint directory or run directory");
    eval_cmd->add_option("--n", eval_n, "Samples per side");
    eval_cmd->add_option("--k", eval_k, "Neighbour count for kNN metrics");
    eval_cmd->add_option("--seed", eval_seed, "Sampling seed");
    eval_cmd->add_option("--out", eval_out, "Output directory for reports and summary.csv");
    eval_cmd->add_option("--dataset-folder", eval_folder, "Evaluate against an image folder instead");
    eval_cmd->add_option("--summarize", eval_summarize, "Print the mean of the 5 lowest FIDs of a run directory");

    std::vector<std::string> diag_runs;
    std::string diag_sampling;
    std::vector<std::size_t> diag_sizes{256, 1024, 4096, 16384};
    int diag_trials = 5;
    auto* diag_cmd = app.add_subcommand("diagnose", "Stability summary and sampling-error curves");
    diag_cmd->add_option("runs", diag_runs, "Run directories");
    diag_cmd->add_option("--sampling-error", diag_sampling, "Teacher checkpoint to estimate sampling error for");
    diag_cmd->add_option("--sizes", diag_sizes, "Sample sizes for the sampling-error curve")->delimiter(',');
    diag_cmd->add_option("--trials", diag_trials, "Trials per sample size");

    std::vector<std::string> plot_runs, plot_grids;
    std::string plot_out = "plots";
    std::uint64_t grid_seed = 0;
    int grid_count = 8;
    auto* plot_cmd = app.add_subcommand("plot", "Convergence, stability and compression plots; sample grids");
    plot_cmd->add_option("runs", plot_runs, "Run directories");
    plot_cmd->add_option("--out", plot_out, "Output directory");
    plot_cmd->add_option("--grid", plot_grids, "Checkpoint to render a sample grid from (repeatable)");
    plot_cmd->add_option("--grid-seed", grid_seed, "Latent seed for sample grids");
    plot_cmd->add_option("--grid-count", grid_count, "Samples per grid")->check(CLI::Range(1, 256));

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << kCodeVersion << "\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (*teacher_cmd) return cmd_train_teacher(config_path, common, out, err);
        if (*distill_cmd) return cmd_distill(config_path, common, method, compression, teacher, dime_mode, out, err);
        if (*prune_cmd) return cmd_prune(prune_teacher, prune_netspec, prune_target, prune_tol, prune_out, out);
        if (*eval_cmd) return cmd_evaluate(eval_target, eval_n, eval_k, eval_seed, eval_out, eval_folder, eval_summarize, out);
        if (*diag_cmd) return cmd_diagnose(diag_runs, diag_sampling, diag_sizes, diag_trials, out);
        if (*plot_cmd) return cmd_plot(plot_runs, plot_out, plot_grids, grid_seed, grid_count, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const InfeasibleError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DivergenceError& e) {
        err << "diverged at step " << e.step() << ": " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace ndgan::cli
