#include "ndgan/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "ndgan/error.hpp"
#include "ndgan/simd.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ndgan {
namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + where);
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

std::string step_name(long step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step_%07ld", step);
    return buf;
}

// Config without run-location fields, so relocated reruns hash identically.
json hashable_config(const TrainConfig& cfg) {
    json j = to_json(cfg);
    j.erase("output_dir");
    j.erase("teacher_checkpoint");
    j.erase("resume");
    return j;
}

AdamConfig adam(const TrainConfig& cfg, double lr) { return {lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8}; }

double r1_weight(const TrainConfig& cfg, long step) {
    return cfg.r1_interval > 0 && step % cfg.r1_interval == 0 ? static_cast<double>(cfg.r1_interval) : 0.0;
}

Tensor real_batch(const ImageDataset& data, const TrainConfig& cfg, const char* stream, long step) {
    const auto idx = batch_indices(data.size(), static_cast<std::size_t>(cfg.batch), cfg.seed, stream,
                                   static_cast<std::uint64_t>(step));
    return data.batch(idx);
}

Tensor latents(const TrainConfig& cfg, const char* stream, long step) {
    return sample_latents(static_cast<std::size_t>(cfg.latent_dim), static_cast<std::size_t>(cfg.batch), cfg.seed,
                          stream, static_cast<std::uint64_t>(step));
}

void scale_grads(const std::vector<Param*>& params, double s) {
    for (Param* p : params) p->grad *= s;
}

std::unique_ptr<EmbeddingKernel> load_kernel(const Checkpoint& ckpt, const std::string& prefix) {
    const json& meta = ckpt.meta.at("kernels").at(prefix);
    auto k = std::make_unique<EmbeddingKernel>(kernel_spec_from_json(meta.at("spec")));
    k->load(ckpt, prefix);
    return k;
}

void prepare_kernel(EmbeddingKernel& kernel, const ImageDataset& data, const TrainConfig& cfg, std::ostream* progress) {
    if (kernel.spec().kind == "classifier") {
        KernelTrainConfig kt = cfg.kernel_train;
        kt.seed = derive_seed(cfg.seed ^ kernel.spec().seed, "kernel.train." + kernel.name());
        const double acc = train_kernel(kernel, data, kt);
        if (progress) *progress << "kernel " << kernel.name() << ": train accuracy " << acc << "\n";
    } else if (kernel.spec().kind != "random") {
        throw ConfigError("kernel '" + kernel.name() + "': unknown kind '" + kernel.spec().kind + "'");
    }
    calibrate_feature_scale(kernel, data, 2048, cfg.seed);
}

Tensor eval_real_features(EmbeddingKernel& kernel, const ImageDataset& data, const TrainConfig& cfg) {
    const std::size_t n = std::min(cfg.eval_samples, data.size());
    return embed_all(kernel, real_source(data, cfg.seed), n);
}

double eval_fid(EmbeddingKernel& kernel, Network& g, const Tensor& real_feats, const TrainConfig& cfg) {
    const Tensor fake = embed_all(kernel, generator_source(g, cfg.seed, "eval.fake"), real_feats.dim(0));
    return fid(feature_stats(real_feats, kernel.name()), feature_stats(fake, kernel.name()));
}

json step_record(const StepLog& log, double wall) {
    json j = to_json(log.breakdown);
    j["step"] = log.step;
    j["d_loss"] = log.d_loss;
    j["r1"] = log.r1;
    j["real_logit"] = log.real_logit;
    j["fake_logit"] = log.fake_logit;
    j["wall_time"] = wall;
    return j;
}

bool finite_log(const StepLog& l) {
    const auto& b = l.breakdown;
    for (double v : {b.total, b.adv_teacherD, b.adv_studentD, b.dime_a, b.dime_b, b.nickel, l.d_loss, l.r1,
                     l.real_logit, l.fake_logit}) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// Keeps only records whose "step" satisfies `keep`.
template <typename Pred>
void filter_jsonl(const fs::path& path, Pred keep) {
    if (!fs::exists(path)) return;
    const auto records = read_jsonl(path);
    std::ofstream os(path, std::ios::trunc);
    for (const auto& r : records) {
        if (keep(r.at("step").get<long>())) os << r.dump() << "\n";
    }
}

void write_checkpoint(const fs::path& run_dir, const std::string& name, const Checkpoint& ckpt) {
    const fs::path dir = run_dir / "checkpoints" / name;
    save_checkpoint(dir, ckpt);
    const fs::path tmp = run_dir / "checkpoints" / "LATEST.tmp";
    std::ofstream(tmp) << name << "\n";
    fs::rename(tmp, run_dir / "checkpoints" / "LATEST");
}

void write_json(const fs::path& path, const json& j) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp);
        os << j.dump(2) << "\n";
        if (!os) throw Error("cannot write " + path.string());
    }
    fs::rename(tmp, path);
}

// Shared outer loop: logging, periodic evaluation, divergence, checkpoints.
template <typename Session>
RunResult run_loop(Session& session, const TrainConfig& cfg, long start, DivergenceDetector& det,
                   std::ostream* progress) {
    const fs::path log_path = cfg.output_dir / "log.jsonl";
    const fs::path metrics_path = cfg.output_dir / "metrics.jsonl";
    const auto t0 = std::chrono::steady_clock::now();
    RunResult result;
    result.run_dir = cfg.output_dir;
    for (long step = start; step < cfg.steps; ++step) {
        const StepLog log = session.step(step);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        append_jsonl(log_path, step_record(log, wall));
        if (!finite_log(log)) {
            throw DivergenceError("non-finite loss at step " + std::to_string(step) +
                                      "; last good checkpoint retained",
                                  step);
        }
        const long done = step + 1;
        if (done % cfg.eval_interval == 0 || done == cfg.steps) {
            const double f = session.evaluate_fid();
            append_jsonl(metrics_path, {{"step", done}, {"fid", f}});
            result.final_fid = f;
            const bool diverged = det.update(f);
            if (progress) *progress << "step " << done << "/" << cfg.steps << " fid " << f << "\n";
            if (!std::isfinite(f)) throw DivergenceError("non-finite FID at step " + std::to_string(done), done);
            write_checkpoint(cfg.output_dir, step_name(done), session.checkpoint(done, det));
            if (diverged) {
                throw DivergenceError("FID worsened for " + std::to_string(cfg.divergence_patience) +
                                          " consecutive evaluations (best " + std::to_string(*det.best()) +
                                          ", latest " + std::to_string(f) + ")",
                                      done);
            }
        }
    }
    result.steps = cfg.steps;
    result.best_fid = det.best();
    write_checkpoint(cfg.output_dir, "final", session.checkpoint(cfg.steps, det));
    result.checkpoint = cfg.output_dir / "checkpoints" / "final";
    result.checkpoint_hash = checkpoint_hash(result.checkpoint);
    return result;
}

// Returns the step to start from and restores state when resuming.
template <typename Session>
long begin_run(Session& session, const TrainConfig& cfg, DivergenceDetector& det, bool& restored) {
    fs::create_directories(cfg.output_dir / "checkpoints");
    write_json(cfg.output_dir / "config.json", to_json(cfg));
    restored = false;
    long start = 0;
    if (cfg.resume) {
        if (auto latest = latest_checkpoint(cfg.output_dir)) {
            start = session.restore(load_checkpoint(*latest), det);
            restored = true;
        }
    }
    filter_jsonl(cfg.output_dir / "log.jsonl", [&](long s) { return s < start; });
    filter_jsonl(cfg.output_dir / "metrics.jsonl", [&](long s) { return s <= start; });
    return start;
}

}  // namespace

// ----------------------------------------------------------------- config

std::shared_ptr<ImageDataset> make_dataset(const DatasetConfig& cfg, const fs::path& cache_root) {
    if (cfg.kind == "mixture") {
        MixtureConfig m;
        m.n_modes = cfg.n_modes;
        m.std = cfg.std;
        m.size = cfg.size;
        m.resolution = cfg.resolution;
        m.seed = cfg.seed;
        return std::make_shared<SyntheticMixture>(m);
    }
    if (cfg.kind == "folder") return ingest_folder(cfg.path, cfg.resolution, cache_root).dataset;
    throw ConfigError("dataset: unknown kind '" + cfg.kind + "' (expected mixture|folder)");
}

Method method_from_string(const std::string& s) {
    if (s == "dime") return Method::dime;
    if (s == "nickel") return Method::nickel;
    if (s == "nickel-dime") return Method::nickel_dime;
    if (s == "adv-only") return Method::adv_only;
    throw ConfigError("unknown method '" + s + "' (expected dime|nickel|nickel-dime|adv-only)");
}

std::string to_string(Method m) {
    switch (m) {
        case Method::dime: return "dime";
        case Method::nickel: return "nickel";
        case Method::nickel_dime: return "nickel-dime";
        case Method::adv_only: return "adv-only";
    }
    return "nickel-dime";
}

LossWeights apply_method(LossWeights w, Method m) {
    if (m == Method::dime || m == Method::adv_only) w.lambda_nickel = 0.0;
    if (m == Method::nickel || m == Method::adv_only) w.lambda_kernel_a = w.lambda_kernel_b = 0.0;
    return w;
}

void TrainConfig::validate() const {
    if (steps <= 0) throw ConfigError("config: steps must be > 0");
    if (batch < 2) throw ConfigError("config: batch must be >= 2");
    for (const auto& [name, lr] : {std::pair{"lr_g", lr_g}, {"lr_d", lr_d}, {"lr_proj", lr_proj}}) {
        if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError(std::string("config: ") + name + " must be > 0");
    }
    if (latent_dim < 1 || base_channels < 1) throw ConfigError("config: latent_dim and base_channels must be >= 1");
    if (dataset.resolution < 8 || (dataset.resolution & (dataset.resolution - 1)) != 0) {
        throw ConfigError("config: dataset.resolution must be a power of two >= 8");
    }
    if (dataset.kind == "folder" && dataset.path.empty()) throw ConfigError("config: folder dataset needs a path");
    if (target_compression < 0.0 || target_compression >= 1.0) {
        throw ConfigError("config: target_compression must lie in [0, 1)");
    }
    if (eval_interval < 1) throw ConfigError("config: eval.interval must be >= 1");
    if (eval_samples < 2) throw ConfigError("config: eval.samples must be >= 2");
    if (k < 1) throw ConfigError("config: eval.k must be >= 1");
    if (kernels.size() > 2) throw ConfigError("config: at most two training kernels (lambda_kernel_a, lambda_kernel_b)");
    if (r1_interval < 0) throw ConfigError("config: r1_interval must be >= 0");
    if (divergence_patience < 1 || !(divergence_ratio > 1.0)) {
        throw ConfigError("config: divergence patience must be >= 1 and ratio > 1");
    }
    if (global_samples < 1 || global_batch < 1 || global_samples < global_batch) {
        throw ConfigError("config: global_samples must be >= global_batch >= 1");
    }
    std::set<std::string> names{metrics_kernel.name};
    for (const auto& ks : kernels) {
        if (!names.insert(ks.name).second) throw ConfigError("config: duplicate kernel name '" + ks.name + "'");
    }
    weights.validate();
}

TrainConfig default_train_config() {
    TrainConfig cfg;
    KernelSpec a;
    a.name = "kernel_a";
    a.kind = "classifier";
    a.seed = 1;
    KernelSpec b;
    b.name = "kernel_b";
    b.kind = "random";
    b.width = 24;
    b.seed = 2;
    cfg.kernels = {a, b};
    cfg.metrics_kernel.name = "metrics";
    cfg.metrics_kernel.kind = "classifier";
    cfg.metrics_kernel.width = 12;
    cfg.metrics_kernel.seed = 101;
    return cfg;
}

json to_json(const DatasetConfig& d) {
    return {{"kind", d.kind},       {"path", d.path}, {"resolution", d.resolution}, {"n_modes", d.n_modes},
            {"std", d.std},         {"size", d.size}, {"seed", d.seed}};
}

DatasetConfig dataset_config_from_json(const json& j) {
    reject_unknown(j, {"kind", "path", "resolution", "n_modes", "std", "size", "seed"}, "dataset");
    DatasetConfig d;
    read(j, "kind", d.kind);
    read(j, "path", d.path);
    read(j, "resolution", d.resolution);
    read(j, "n_modes", d.n_modes);
    read(j, "std", d.std);
    read(j, "size", d.size);
    read(j, "seed", d.seed);
    return d;
}

json to_json(const TrainConfig& c) {
    json kernels = json::array();
    for (const auto& k : c.kernels) kernels.push_back(to_json(k));
    return {{"schema", kConfigSchema},
            {"seed", c.seed},
            {"output_dir", c.output_dir.string()},
            {"teacher_checkpoint", c.teacher_checkpoint.string()},
            {"resume", c.resume},
            {"dataset", to_json(c.dataset)},
            {"model", {{"latent_dim", c.latent_dim}, {"base_channels", c.base_channels}}},
            {"optim",
             {{"steps", c.steps},
              {"batch", c.batch},
              {"lr_g", c.lr_g},
              {"lr_d", c.lr_d},
              {"lr_proj", c.lr_proj},
              {"beta1", c.adam_beta1},
              {"beta2", c.adam_beta2},
              {"r1_interval", c.r1_interval}}},
            {"distill",
             {{"target_compression", c.target_compression},
              {"method", to_string(c.method)},
              {"dime_mode", to_string(c.dime_mode)},
              {"global_samples", c.global_samples},
              {"global_batch", c.global_batch}}},
            {"weights", to_json(c.weights)},
            {"kernels", kernels},
            {"metrics_kernel", to_json(c.metrics_kernel)},
            {"kernel_train",
             {{"steps", c.kernel_train.steps}, {"batch", c.kernel_train.batch}, {"lr", c.kernel_train.lr}}},
            {"eval",
             {{"interval", c.eval_interval},
              {"samples", c.eval_samples},
              {"k", c.k},
              {"divergence_patience", c.divergence_patience},
              {"divergence_ratio", c.divergence_ratio}}}};
}

TrainConfig train_config_from_json(const json& j) {
    reject_unknown(j,
                   {"schema", "seed", "output_dir", "teacher_checkpoint", "resume", "dataset", "model", "optim",
                    "distill", "weights", "kernels", "metrics_kernel", "kernel_train", "eval"},
                   "config");
    const std::string schema = j.value("schema", std::string());
    if (schema != kConfigSchema) {
        throw ConfigError("config: schema must be '" + std::string(kConfigSchema) + "', got '" + schema + "'");
    }
    TrainConfig c = default_train_config();
    read(j, "seed", c.seed);
    read(j, "resume", c.resume);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("teacher_checkpoint")) c.teacher_checkpoint = j.at("teacher_checkpoint").get<std::string>();
    if (j.contains("dataset")) c.dataset = dataset_config_from_json(j.at("dataset"));
    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m, {"latent_dim", "base_channels"}, "model");
        read(m, "latent_dim", c.latent_dim);
        read(m, "base_channels", c.base_channels);
    }
    if (j.contains("optim")) {
        const json& o = j.at("optim");
        reject_unknown(o, {"steps", "batch", "lr_g", "lr_d", "lr_proj", "beta1", "beta2", "r1_interval"}, "optim");
        read(o, "steps", c.steps);
        read(o, "batch", c.batch);
        read(o, "lr_g", c.lr_g);
        read(o, "lr_d", c.lr_d);
        read(o, "lr_proj", c.lr_proj);
        read(o, "beta1", c.adam_beta1);
        read(o, "beta2", c.adam_beta2);
        read(o, "r1_interval", c.r1_interval);
    }
    if (j.contains("distill")) {
        const json& d = j.at("distill");
        reject_unknown(d, {"target_compression", "method", "dime_mode", "global_samples", "global_batch"}, "distill");
        read(d, "target_compression", c.target_compression);
        if (d.contains("method")) c.method = method_from_string(d.at("method").get<std::string>());
        if (d.contains("dime_mode")) c.dime_mode = dime_mode_from_string(d.at("dime_mode").get<std::string>());
        read(d, "global_samples", c.global_samples);
        read(d, "global_batch", c.global_batch);
    }
    if (j.contains("weights")) {
        reject_unknown(j.at("weights"), {"lambda_kernel_a", "lambda_kernel_b", "lambda_nickel", "r1_gamma"}, "weights");
        c.weights = loss_weights_from_json(j.at("weights"));
    }
    if (j.contains("kernels")) {
        c.kernels.clear();
        for (const auto& k : j.at("kernels")) c.kernels.push_back(kernel_spec_from_json(k));
    }
    if (j.contains("metrics_kernel")) c.metrics_kernel = kernel_spec_from_json(j.at("metrics_kernel"));
    if (j.contains("kernel_train")) {
        const json& k = j.at("kernel_train");
        reject_unknown(k, {"steps", "batch", "lr"}, "kernel_train");
        read(k, "steps", c.kernel_train.steps);
        read(k, "batch", c.kernel_train.batch);
        read(k, "lr", c.kernel_train.lr);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        reject_unknown(e, {"interval", "samples", "k", "divergence_patience", "divergence_ratio"}, "eval");
        read(e, "interval", c.eval_interval);
        read(e, "samples", c.eval_samples);
        read(e, "k", c.k);
        read(e, "divergence_patience", c.divergence_patience);
        read(e, "divergence_ratio", c.divergence_ratio);
    }
    c.validate();
    return c;
}

TrainConfig load_train_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
    }
    return train_config_from_json(j);
}

// -------------------------------------------------------------- stability

StabilitySummary track_stability(const std::vector<StabilityRecord>& records) {
    if (records.empty()) throw InputError("stability: empty log");
    StabilitySummary s;
    s.records = records;
    s.window = std::max<std::size_t>(1, (records.size() + 3) / 4);
    double total = 0.0;
    for (std::size_t i = records.size() - s.window; i < records.size(); ++i) total += std::fabs(records[i].fake_logit);
    s.drift = total / static_cast<double>(s.window);
    return s;
}

std::vector<StabilityRecord> read_stability(const fs::path& run_dir) {
    std::vector<StabilityRecord> out;
    std::map<long, std::size_t> by_step;
    for (const auto& r : read_jsonl(run_dir / "log.jsonl")) {
        StabilityRecord s;
        s.step = r.at("step").get<long>();
        s.fake_logit = r.at("fake_logit").get<double>();
        s.real_logit = r.at("real_logit").get<double>();
        by_step[s.step] = out.size();
        out.push_back(s);
    }
    if (fs::exists(run_dir / "metrics.jsonl")) {
        for (const auto& r : read_jsonl(run_dir / "metrics.jsonl")) {
            const long done = r.at("step").get<long>();
            if (auto it = by_step.find(done - 1); it != by_step.end()) out[it->second].fid = r.at("fid").get<double>();
        }
    }
    return out;
}

bool DivergenceDetector::update(double f) {
    if (!best_ || f < *best_) {
        best_ = f;
        strikes_ = 0;
        return false;
    }
    strikes_ = f > ratio_ * *best_ ? strikes_ + 1 : 0;
    return strikes_ >= patience_;
}

json DivergenceDetector::state() const {
    json j = {{"strikes", strikes_}};
    j["best"] = best_ ? json(*best_) : json(nullptr);
    return j;
}

void DivergenceDetector::restore(const json& j) {
    strikes_ = j.at("strikes").get<int>();
    best_.reset();
    if (!j.at("best").is_null()) best_ = j.at("best").get<double>();
}

// ---------------------------------------------------------------- teacher

fs::path resolve_checkpoint(const fs::path& path) {
    if (fs::exists(path / "manifest.json")) return path;
    if (fs::exists(path / "checkpoints" / "final" / "manifest.json")) return path / "checkpoints" / "final";
    throw ConfigError("checkpoint not found: " + path.string());
}

TeacherBundle load_teacher(const fs::path& path) {
    TeacherBundle t;
    t.checkpoint_dir = resolve_checkpoint(path);
    const Checkpoint ckpt = load_checkpoint(t.checkpoint_dir);
    if (ckpt.meta.value("role", std::string()) != "teacher") {
        throw ConfigError("checkpoint " + t.checkpoint_dir.string() + " is not a teacher checkpoint");
    }
    t.g = std::make_unique<Network>(spec_from_json(ckpt.meta.at("g_spec")), 0);
    ckpt.get_params("G", t.g->params());
    t.d = std::make_unique<Network>(spec_from_json(ckpt.meta.at("d_spec")), 0);
    ckpt.get_params("D", t.d->params());
    for (const auto& name : ckpt.meta.at("kernel_names")) t.kernels.push_back(load_kernel(ckpt, "kernel/" + name.get<std::string>()));
    t.metrics_kernel = load_kernel(ckpt, "metrics_kernel");
    t.dataset = dataset_config_from_json(ckpt.meta.at("dataset"));
    t.checkpoint_hash = checkpoint_hash(t.checkpoint_dir);
    return t;
}

TeacherSession::TeacherSession(const TrainConfig& cfg, std::shared_ptr<ImageDataset> data, std::ostream* progress)
    : cfg_(cfg), data_(std::move(data)), progress_(progress) {
    cfg_.validate();
    if (data_->resolution() != cfg_.dataset.resolution) throw ConfigError("teacher: dataset resolution mismatch");
    g_ = std::make_unique<Network>(default_generator_spec(cfg_.dataset.resolution, cfg_.latent_dim, cfg_.base_channels),
                                   cfg_.seed);
    d_ = std::make_unique<Network>(default_discriminator_spec(cfg_.dataset.resolution, cfg_.base_channels), cfg_.seed);
    opt_g_ = std::make_unique<Adam>(g_->params(), adam(cfg_, cfg_.lr_g));
    opt_d_ = std::make_unique<Adam>(d_->params(), adam(cfg_, cfg_.lr_d));
    for (const auto& ks : cfg_.kernels) kernels_.push_back(std::make_unique<EmbeddingKernel>(ks));
    metrics_kernel_ = std::make_unique<EmbeddingKernel>(cfg_.metrics_kernel);
}

void TeacherSession::prepare_kernels() {
    for (auto& k : kernels_) prepare_kernel(*k, *data_, cfg_, progress_);
    prepare_kernel(*metrics_kernel_, *data_, cfg_, progress_);
}

StepLog TeacherSession::step(long step) {
    StepLog log;
    log.step = step;
    const Tensor real = real_batch(*data_, cfg_, "teacher.real", step);
    {
        const Tensor fake = g_->forward(latents(cfg_, "teacher.z", step)).out;
        d_->zero_grad();
        const DiscriminatorStep ds = discriminator_backward(*d_, real, fake, cfg_.weights.r1_gamma, r1_weight(cfg_, step));
        opt_d_->step();
        log.d_loss = ds.logistic;
        log.r1 = ds.r1;
        log.real_logit = ds.mean_real_logit;
        log.fake_logit = ds.mean_fake_logit;
    }
    g_->zero_grad();
    const Tensor fake = g_->forward(latents(cfg_, "teacher.zg", step)).out;
    const GeneratorAdversarial adv = generator_adversarial({d_.get()}, fake);
    g_->backward(adv.grad, true);
    opt_g_->step();
    LossComponents c;
    c.adv_teacherD = adv.value;
    log.breakdown = total_loss(c, cfg_.weights);
    return log;
}

double TeacherSession::evaluate_fid() {
    if (!real_feats_) real_feats_ = eval_real_features(*metrics_kernel_, *data_, cfg_);
    return eval_fid(*metrics_kernel_, *g_, *real_feats_, cfg_);
}

Checkpoint TeacherSession::checkpoint(long next_step, const DivergenceDetector& det) const {
    Checkpoint ck;
    auto& self = const_cast<TeacherSession&>(*this);
    ck.put_params("G", self.g_->params());
    ck.put_params("D", self.d_->params());
    opt_g_->save(ck, "optG");
    opt_d_->save(ck, "optD");
    json names = json::array();
    for (auto& k : self.kernels_) {
        k->save(ck, "kernel/" + k->name());
        names.push_back(k->name());
    }
    self.metrics_kernel_->save(ck, "metrics_kernel");
    ck.meta["role"] = "teacher";
    ck.meta["step"] = next_step;
    ck.meta["seed"] = cfg_.seed;
    ck.meta["g_spec"] = to_json(g_->spec());
    ck.meta["d_spec"] = to_json(d_->spec());
    ck.meta["g_spec_hash"] = spec_hash(g_->spec());
    ck.meta["d_spec_hash"] = spec_hash(d_->spec());
    ck.meta["kernel_names"] = names;
    ck.meta["dataset"] = to_json(cfg_.dataset);
    ck.meta["dataset_hash"] = data_->handle().content_hash;
    ck.meta["config"] = hashable_config(cfg_);
    ck.meta["detector"] = det.state();
    return ck;
}

long TeacherSession::restore(const Checkpoint& ck, DivergenceDetector& det) {
    ck.get_params("G", g_->params());
    ck.get_params("D", d_->params());
    opt_g_->load(ck, "optG");
    opt_d_->load(ck, "optD");
    for (auto& k : kernels_) k->load(ck, "kernel/" + k->name());
    metrics_kernel_->load(ck, "metrics_kernel");
    det.restore(ck.meta.at("detector"));
    return ck.meta.at("step").get<long>();
}

RunResult train_teacher(const TrainConfig& cfg, std::ostream* progress) {
    cfg.validate();
    auto data = make_dataset(cfg.dataset, default_cache_root());
    TeacherSession session(cfg, data, progress);
    DivergenceDetector det(cfg.divergence_patience, cfg.divergence_ratio);
    bool restored = false;
    const long start = begin_run(session, cfg, det, restored);
    if (!restored) session.prepare_kernels();
    RunResult r = run_loop(session, cfg, start, det, progress);
    r.compression = 0.0;
    return r;
}

// ---------------------------------------------------------------- distill

DistillSession::DistillSession(const TrainConfig& cfg, TeacherBundle& teacher, std::shared_ptr<ImageDataset> data,
                               const fs::path& cache_root, std::ostream* progress)
    : cfg_(cfg), teacher_(teacher), data_(std::move(data)), progress_(progress) {
    cfg_.validate();
    weights_ = apply_method(cfg_.weights, cfg_.method);
    const NetworkSpec& tspec = teacher_.g->spec();
    const NetworkSpec sspec =
        cfg_.target_compression > 0.0 ? prune_spec(tspec, cfg_.target_compression) : tspec;
    achieved_ = *count_cost(sspec, &tspec).compression_rate;
    gs_ = std::make_unique<Network>(sspec, cfg_.seed);
    gs_->init_from(*teacher_.g);
    ds_ = std::make_unique<Network>(teacher_.d->spec(), cfg_.seed);
    ds_->init_from(*teacher_.d);

    const std::size_t taps_g = teacher_.g->spec().feature_taps.size();
    const std::size_t taps_d = ds_->spec().feature_taps.size();
    if (taps_g != taps_d || taps_g == 0) throw ConfigError("distill: generator and discriminator tap counts differ");
    std::vector<Shape> s_items, t_items;
    for (std::size_t i = 0; i < taps_g; ++i) {
        s_items.push_back(ds_->tap_item_shape(i));
        t_items.push_back(teacher_.g->tap_item_shape(i));
    }
    proj_ = FeatureProjection(s_items, t_items, cfg_.seed);

    opt_g_ = std::make_unique<Adam>(gs_->params(), adam(cfg_, cfg_.lr_g));
    opt_d_ = std::make_unique<Adam>(ds_->params(), adam(cfg_, cfg_.lr_d));
    opt_p_ = std::make_unique<Adam>(proj_.params(), adam(cfg_, cfg_.lr_proj));

    const double lambdas[2] = {weights_.lambda_kernel_a, weights_.lambda_kernel_b};
    caches_.resize(teacher_.kernels.size());
    for (std::size_t i = 0; i < teacher_.kernels.size() && i < 2; ++i) {
        if (lambdas[i] > 0.0 && cfg_.dime_mode != DimeMode::paired) {
            caches_[i] = load_or_compute_cache(cache_root, *teacher_.kernels[i], *teacher_.g, teacher_.checkpoint_hash,
                                               cfg_.global_samples, cfg_.global_batch, 0);
            if (progress_) {
                *progress_ << "global features for " << teacher_.kernels[i]->name() << ": "
                           << caches_[i].num_samples << " samples\n";
            }
        }
    }
}

StepLog DistillSession::d_step(long step) {
    StepLog log;
    log.step = step;
    zero_grads(ds_->params());
    zero_grads(proj_.params());
    const Tensor real = real_batch(*data_, cfg_, "distill.real", step);
    const Tensor z = latents(cfg_, "distill.z", step);
    const Tensor fake = gs_->forward(z).out;
    const DiscriminatorStep ds = discriminator_backward(*ds_, real, fake, weights_.r1_gamma, r1_weight(cfg_, step));
    log.d_loss = ds.logistic;
    log.r1 = ds.r1;
    log.real_logit = ds.mean_real_logit;
    log.fake_logit = ds.mean_fake_logit;
    if (weights_.lambda_nickel > 0.0) {
        const Network::Output t = teacher_.g->forward(z);
        const Network::Output d = ds_->forward(t.out);
        NickelResult n = nickel_loss(t.taps, d.taps, proj_, true);
        for (Tensor& g : n.tap_grads) g *= weights_.lambda_nickel;
        ds_->backward(Tensor(d.out.shape()), n.tap_grads, true);
        scale_grads(proj_.params(), weights_.lambda_nickel);
        log.breakdown.nickel = n.value;
        opt_p_->step();
    }
    opt_d_->step();
    return log;
}

void DistillSession::g_step(long step, StepLog& log) {
    zero_grads(gs_->params());
    const Tensor z = latents(cfg_, "distill.zg", step);
    const Tensor fake = gs_->forward(z).out;
    const GeneratorAdversarial adv = generator_adversarial({teacher_.d.get(), ds_.get()}, fake);
    Tensor grad = adv.grad;
    const double lambdas[2] = {weights_.lambda_kernel_a, weights_.lambda_kernel_b};
    double dime[2] = {0.0, 0.0};
    std::optional<Tensor> teacher_images;
    for (std::size_t i = 0; i < teacher_.kernels.size() && i < 2; ++i) {
        if (lambdas[i] <= 0.0) continue;
        if (cfg_.dime_mode != DimeMode::global && !teacher_images) teacher_images = teacher_.g->forward(z).out;
        const LossValue v = dime_loss(*teacher_.kernels[i], fake, teacher_images ? &*teacher_images : nullptr,
                                      caches_[i].mean_feature.empty() ? nullptr : &caches_[i], cfg_.dime_mode);
        dime[i] = v.value;
        simd::axpy(lambdas[i], v.grad.span(), grad.span());
    }
    gs_->backward(grad, true);
    opt_g_->step();
    LossComponents c{adv.terms.at(0), adv.terms.at(1), dime[0], dime[1], log.breakdown.nickel};
    log.breakdown = total_loss(c, weights_);
}

StepLog DistillSession::step(long step) {
    StepLog log = d_step(step);
    g_step(step, log);
    return log;
}

double DistillSession::evaluate_fid() {
    if (!real_feats_) real_feats_ = eval_real_features(*teacher_.metrics_kernel, *data_, cfg_);
    return eval_fid(*teacher_.metrics_kernel, *gs_, *real_feats_, cfg_);
}

double DistillSession::paired_dime(std::size_t kernel_index, long step) {
    const Tensor z = latents(cfg_, "distill.zg", step);
    const Tensor s = gs_->forward(z).out;
    const Tensor t = teacher_.g->forward(z).out;
    return dime_loss(*teacher_.kernels.at(kernel_index), s, &t, nullptr, DimeMode::paired).value;
}

Checkpoint DistillSession::checkpoint(long next_step, const DivergenceDetector& det) const {
    auto& self = const_cast<DistillSession&>(*this);
    Checkpoint ck;
    ck.put_params("G", self.gs_->params());
    ck.put_params("D", self.ds_->params());
    ck.put_params("proj", self.proj_.params());
    opt_g_->save(ck, "optG");
    opt_d_->save(ck, "optD");
    opt_p_->save(ck, "optP");
    self.teacher_.metrics_kernel->save(ck, "metrics_kernel");
    ck.meta["role"] = "student";
    ck.meta["step"] = next_step;
    ck.meta["seed"] = cfg_.seed;
    ck.meta["g_spec"] = to_json(gs_->spec());
    ck.meta["d_spec"] = to_json(ds_->spec());
    ck.meta["g_spec_hash"] = spec_hash(gs_->spec());
    ck.meta["teacher_g_spec"] = to_json(teacher_.g->spec());
    ck.meta["teacher_hash"] = teacher_.checkpoint_hash;
    ck.meta["method"] = to_string(cfg_.method);
    ck.meta["weights"] = to_json(weights_);
    ck.meta["compression"] = achieved_;
    ck.meta["dataset"] = to_json(teacher_.dataset);
    ck.meta["config"] = hashable_config(cfg_);
    ck.meta["detector"] = det.state();
    return ck;
}

long DistillSession::restore(const Checkpoint& ck, DivergenceDetector& det) {
    if (ck.meta.value("teacher_hash", std::string()) != teacher_.checkpoint_hash) {
        throw ConfigError("resume: checkpoint was distilled from a different teacher");
    }
    ck.get_params("G", gs_->params());
    ck.get_params("D", ds_->params());
    ck.get_params("proj", proj_.params());
    opt_g_->load(ck, "optG");
    opt_d_->load(ck, "optD");
    opt_p_->load(ck, "optP");
    det.restore(ck.meta.at("detector"));
    return ck.meta.at("step").get<long>();
}

RunResult distill(const TrainConfig& cfg_in, std::ostream* progress) {
    cfg_in.validate();
    if (cfg_in.teacher_checkpoint.empty()) throw ConfigError("distill: teacher_checkpoint is required");
    TeacherBundle teacher = load_teacher(cfg_in.teacher_checkpoint);
    TrainConfig cfg = cfg_in;
    cfg.dataset = teacher.dataset;
    cfg.latent_dim = teacher.g->spec().latent_dim;
    const fs::path cache_root = default_cache_root();
    auto data = make_dataset(cfg.dataset, cache_root);
    DistillSession session(cfg, teacher, data, cache_root, progress);
    if (progress) *progress << "student compression " << session.achieved_compression() << "\n";
    DivergenceDetector det(cfg.divergence_patience, cfg.divergence_ratio);
    bool restored = false;
    const long start = begin_run(session, cfg, det, restored);
    RunResult r = run_loop(session, cfg, start, det, progress);
    r.compression = session.achieved_compression();
    return r;
}

double summarize_best_fid(const fs::path& run_dir, std::size_t count) {
    const fs::path path = run_dir / "metrics.jsonl";
    if (!fs::exists(path)) throw InputError("summarize: no metrics.jsonl in " + run_dir.string());
    std::vector<double> fids;
    for (const auto& r : read_jsonl(path)) fids.push_back(r.at("fid").get<double>());
    if (fids.empty()) throw InputError("summarize: no FID records in " + run_dir.string());
    std::sort(fids.begin(), fids.end());
    const std::size_t n = std::min(count, fids.size());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += fids[i];
    return s / static_cast<double>(n);
}

std::optional<fs::path> latest_checkpoint(const fs::path& run_dir) {
    std::ifstream is(run_dir / "checkpoints" / "LATEST");
    std::string name;
    if (!(is >> name)) return std::nullopt;
    const fs::path p = run_dir / "checkpoints" / name;
    if (!fs::exists(p / "manifest.json")) return std::nullopt;
    return p;
}

std::unique_ptr<Network> load_generator(const Checkpoint& ckpt) {
    auto g = std::make_unique<Network>(spec_from_json(ckpt.meta.at("g_spec")), 0);
    ckpt.get_params("G", g->params());
    return g;
}

std::unique_ptr<EmbeddingKernel> load_metrics_kernel(const Checkpoint& ckpt) { return load_kernel(ckpt, "metrics_kernel"); }

// -------------------------------------------------------------- manifests

std::string utc_timestamp() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

json to_json(const ExperimentManifest& m) {
    return {{"command", m.command},         {"config", m.config},           {"code_version", m.code_version},
            {"seed", m.seed},               {"artifacts", m.artifacts},     {"started_at", m.started_at},
            {"finished_at", m.finished_at}, {"status", m.status},           {"input_hashes", m.input_hashes},
            {"error", m.error}};
}

ExperimentManifest manifest_from_json(const json& j) {
    ExperimentManifest m;
    m.command = j.at("command").get<std::string>();
    m.config = j.value("config", json::object());
    m.code_version = j.value("code_version", std::string());
    m.seed = j.value("seed", std::uint64_t{0});
    m.artifacts = j.value("artifacts", std::vector<std::string>{});
    m.started_at = j.value("started_at", std::string());
    m.finished_at = j.value("finished_at", std::string());
    m.status = j.value("status", std::string());
    m.input_hashes = j.value("input_hashes", json::object());
    m.error = j.value("error", std::string());
    return m;
}

void write_manifest(const fs::path& path, const ExperimentManifest& m) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_json(path, to_json(m));
}

ExperimentManifest read_manifest(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw InputError("manifest: cannot open " + path.string());
    json j;
    is >> j;
    return manifest_from_json(j);
}

void append_jsonl(const fs::path& path, const json& record) {
    std::ofstream os(path, std::ios::app);
    os << record.dump() << "\n";
    os.flush();
    if (!os) throw Error("cannot append to " + path.string());
}

std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open " + path.string());
    std::vector<json> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception&) {
            // A torn final line from a crash is skipped.
        }
    }
    return out;
}

}  // namespace ndgan
