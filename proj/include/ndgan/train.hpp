#pragma once

// Teacher pretraining, dual-distillation loop, stability tracking, run
// directories, and the versioned experiment config.
//
// Run directory layout:
//   experiment.json          manifest (written by the CLI)
//   config.json              resolved config
//   log.jsonl                one record per step (loss breakdown + logits)
//   metrics.jsonl            one record per evaluation
//   checkpoints/step_NNNNNNN periodic checkpoints; checkpoints/final at the end
//   checkpoints/LATEST       name of the newest complete checkpoint

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ndgan/data.hpp"
#include "ndgan/kernels.hpp"
#include "ndgan/losses.hpp"
#include "ndgan/metrics.hpp"
#include "ndgan/nets.hpp"
#include "ndgan/optim.hpp"

namespace ndgan {

inline constexpr const char* kConfigSchema = "ndgan.v1";
inline constexpr const char* kCodeVersion = "0.1.0";

struct DatasetConfig {
    std::string kind = "mixture";  // "mixture" | "folder"
    std::string path;              // folder datasets only
    int resolution = 32;
    int n_modes = 8;
    double std = 0.05;
    std::size_t size = 10000;
    std::uint64_t seed = 0;
};

std::shared_ptr<ImageDataset> make_dataset(const DatasetConfig& cfg, const std::filesystem::path& cache_root);

enum class Method { dime, nickel, nickel_dime, adv_only };
Method method_from_string(const std::string& s);
std::string to_string(Method m);
// dime: lambda_nickel = 0; nickel: kernel lambdas = 0; adv-only: all 0.
LossWeights apply_method(LossWeights w, Method m);

struct TrainConfig {
    DatasetConfig dataset;
    std::filesystem::path output_dir = "runs/run";
    std::filesystem::path teacher_checkpoint;  // distillation input

    int latent_dim = 64;
    int base_channels = 32;

    int steps = 2000;
    int batch = 16;
    double lr_g = 2e-4;
    double lr_d = 2e-4;
    double lr_proj = 2e-4;
    double adam_beta1 = 0.0;
    double adam_beta2 = 0.99;
    int r1_interval = 4;

    double target_compression = 0.9;
    Method method = Method::nickel_dime;
    DimeMode dime_mode = DimeMode::global;
    LossWeights weights;

    std::vector<KernelSpec> kernels;  // up to two: weights lambda_kernel_a / lambda_kernel_b
    KernelSpec metrics_kernel;
    KernelTrainConfig kernel_train;
    std::size_t global_samples = 20000;
    std::size_t global_batch = 256;

    int eval_interval = 250;
    std::size_t eval_samples = 2000;
    int k = 5;
    int divergence_patience = 5;
    double divergence_ratio = 1.5;

    bool resume = false;
    std::uint64_t seed = 0;

    // Throws ConfigError naming the first invalid field.
    void validate() const;
};

TrainConfig default_train_config();
nlohmann::json to_json(const TrainConfig& cfg);
// Keys missing from `j` keep their defaults; unknown keys are errors.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

struct StabilityRecord {
    long step = 0;
    double fake_logit = 0.0;
    double real_logit = 0.0;
    std::optional<double> fid;
};

struct StabilitySummary {
    std::vector<StabilityRecord> records;
    double drift = 0.0;  // mean |fake logit| over the last 25% of records
    std::size_t window = 0;
};

StabilitySummary track_stability(const std::vector<StabilityRecord>& records);
// Reads log.jsonl (logits) and metrics.jsonl (FIDs) of a run directory.
std::vector<StabilityRecord> read_stability(const std::filesystem::path& run_dir);

// Flags divergence once `patience` consecutive evaluations are each worse than
// `ratio` times the best FID seen so far.
class DivergenceDetector {
public:
    DivergenceDetector(int patience = 5, double ratio = 1.5) : patience_(patience), ratio_(ratio) {}
    bool update(double fid);
    int strikes() const { return strikes_; }
    std::optional<double> best() const { return best_; }
    nlohmann::json state() const;
    void restore(const nlohmann::json& j);

private:
    int patience_;
    double ratio_;
    int strikes_ = 0;
    std::optional<double> best_;
};

// Everything a distillation run needs from a trained teacher.
struct TeacherBundle {
    std::unique_ptr<Network> g;
    std::unique_ptr<Network> d;
    std::vector<std::unique_ptr<EmbeddingKernel>> kernels;
    std::unique_ptr<EmbeddingKernel> metrics_kernel;
    DatasetConfig dataset;
    std::string checkpoint_hash;
    std::filesystem::path checkpoint_dir;
};

// Accepts a checkpoint directory or a run directory (uses checkpoints/final).
std::filesystem::path resolve_checkpoint(const std::filesystem::path& path);
TeacherBundle load_teacher(const std::filesystem::path& path);

DatasetConfig dataset_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DatasetConfig& d);

struct StepLog {
    long step = 0;
    LossBreakdown breakdown;
    double d_loss = 0.0;
    double r1 = 0.0;
    double real_logit = 0.0;
    double fake_logit = 0.0;
};

// Teacher GAN training state.
class TeacherSession {
public:
    TeacherSession(const TrainConfig& cfg, std::shared_ptr<ImageDataset> data, std::ostream* progress = nullptr);

    // Trains the embedding kernels and calibrates their scales.
    void prepare_kernels();
    StepLog step(long step);
    double evaluate_fid();

    Network& generator() { return *g_; }
    Network& discriminator() { return *d_; }
    std::vector<std::unique_ptr<EmbeddingKernel>>& kernels() { return kernels_; }
    EmbeddingKernel& metrics_kernel() { return *metrics_kernel_; }

    Checkpoint checkpoint(long next_step, const DivergenceDetector& det) const;
    long restore(const Checkpoint& ckpt, DivergenceDetector& det);

private:
    TrainConfig cfg_;
    std::shared_ptr<ImageDataset> data_;
    std::ostream* progress_;
    std::unique_ptr<Network> g_, d_;
    std::unique_ptr<Adam> opt_g_, opt_d_;
    std::vector<std::unique_ptr<EmbeddingKernel>> kernels_;
    std::unique_ptr<EmbeddingKernel> metrics_kernel_;
    std::optional<Tensor> real_feats_;
};

// Dual-distillation state: student G^S, trainable D^S (+ projections), frozen
// G^T / D^T / kernels.
class DistillSession {
public:
    DistillSession(const TrainConfig& cfg, TeacherBundle& teacher, std::shared_ptr<ImageDataset> data,
                   const std::filesystem::path& cache_root, std::ostream* progress = nullptr);

    // D^S step: adversarial + R1 + NICKEL; updates D^S and projections.
    StepLog d_step(long step);
    // G^S step: adversarial vs D^T and D^S + DiME; updates G^S.
    void g_step(long step, StepLog& log);
    StepLog step(long step);
    double evaluate_fid();

    // Paired DiME value of the current student against the teacher on the
    // given step's latents (used for diagnostics).
    double paired_dime(std::size_t kernel_index, long step);

    Network& student() { return *gs_; }
    Network& student_d() { return *ds_; }
    FeatureProjection& projection() { return proj_; }
    TeacherBundle& teacher() { return teacher_; }
    const LossWeights& weights() const { return weights_; }
    const NetworkSpec& student_spec() const { return gs_->spec(); }
    double achieved_compression() const { return achieved_; }

    Checkpoint checkpoint(long next_step, const DivergenceDetector& det) const;
    long restore(const Checkpoint& ckpt, DivergenceDetector& det);

private:
    TrainConfig cfg_;
    TeacherBundle& teacher_;
    std::shared_ptr<ImageDataset> data_;
    std::ostream* progress_;
    LossWeights weights_;
    std::unique_ptr<Network> gs_, ds_;
    FeatureProjection proj_;
    std::unique_ptr<Adam> opt_g_, opt_d_, opt_p_;
    std::vector<GlobalFeatureCache> caches_;
    std::optional<Tensor> real_feats_;
    double achieved_ = 0.0;
};

struct RunResult {
    std::filesystem::path run_dir;
    std::filesystem::path checkpoint;
    std::string checkpoint_hash;
    long steps = 0;
    std::optional<double> final_fid;
    std::optional<double> best_fid;
    double compression = 0.0;
};

RunResult train_teacher(const TrainConfig& cfg, std::ostream* progress = nullptr);
RunResult distill(const TrainConfig& cfg, std::ostream* progress = nullptr);

// Mean of the `count` lowest FIDs recorded in a run's metrics.jsonl.
double summarize_best_fid(const std::filesystem::path& run_dir, std::size_t count = 5);

// Newest complete checkpoint of a run, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

// Loads the generator stored in any checkpoint ("G" arrays + meta.g_spec).
std::unique_ptr<Network> load_generator(const Checkpoint& ckpt);
// Loads the metrics kernel stored in any teacher or student checkpoint.
std::unique_ptr<EmbeddingKernel> load_metrics_kernel(const Checkpoint& ckpt);

// ------------------------------------------------------------ manifests

struct ExperimentManifest {
    std::string command;
    nlohmann::json config;
    std::string code_version = kCodeVersion;
    std::uint64_t seed = 0;
    std::vector<std::string> artifacts;
    std::string started_at;
    std::string finished_at;
    std::string status = "running";  // running | ok | failed
    nlohmann::json input_hashes = nlohmann::json::object();
    std::string error;
};

nlohmann::json to_json(const ExperimentManifest& m);
ExperimentManifest manifest_from_json(const nlohmann::json& j);
// Atomic write (temp file + rename).
void write_manifest(const std::filesystem::path& path, const ExperimentManifest& m);
ExperimentManifest read_manifest(const std::filesystem::path& path);

std::string utc_timestamp();
// Appends a line and flushes.
void append_jsonl(const std::filesystem::path& path, const nlohmann::json& record);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

}  // namespace ndgan
