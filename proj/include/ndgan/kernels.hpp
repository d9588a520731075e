#pragma once

// Embedding kernels (frozen feature extractors), teacher global features, and
// empirical sampling-error curves.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ndgan/checkpoint.hpp"
#include "ndgan/data.hpp"
#include "ndgan/layers.hpp"
#include "ndgan/nets.hpp"

namespace ndgan {

struct KernelSpec {
    std::string name = "kernel";
    std::string kind = "random";  // "random" (frozen at init) | "classifier" (trained, then frozen)
    int feature_dim = 32;
    int native_size = 16;  // preprocess resizes every input to native_size^2
    int width = 16;        // channels of the first conv; later convs use 2x
    int head_outputs = 0;  // classifier head size (classes + regression outputs)
    std::uint64_t seed = 0;
};

nlohmann::json to_json(const KernelSpec& spec);
KernelSpec kernel_spec_from_json(const nlohmann::json& j);

// phi: images (B,3,H,W) in [-1,1] -> features (B, feature_dim).
//
// Preprocess recipe: bilinear resize to native_size, identity normalization.
// The extractor's output is multiplied by a fixed feature_scale (set once when
// the kernel is calibrated) so the total feature variance on data is 1.
class EmbeddingKernel {
public:
    explicit EmbeddingKernel(KernelSpec spec);

    const KernelSpec& spec() const { return spec_; }
    const std::string& name() const { return spec_.name; }
    int feature_dim() const { return spec_.feature_dim; }
    double feature_scale() const { return feature_scale_; }
    void set_feature_scale(double s) { feature_scale_ = s; }

    // Deterministic inference. The most recent call is the one backward()
    // differentiates.
    Tensor embed(const Tensor& images);
    // Gradient w.r.t. the images of the last embed() call. Never touches the
    // extractor's parameter gradients.
    Tensor backward(const Tensor& grad_features);

    std::vector<Param*> params();
    std::vector<Param*> extractor_params() { return extractor_.params(); }

    // Classifier head used only while training a "classifier" kernel.
    Tensor head_forward(const Tensor& features);
    Tensor head_backward(const Tensor& grad_logits);
    void train_forward_backward_extractor(const Tensor& images, const Tensor& grad_features);

    void save(Checkpoint& ckpt, const std::string& prefix);
    void load(const Checkpoint& ckpt, const std::string& prefix);

private:
    KernelSpec spec_;
    Sequential extractor_;
    Sequential head_;
    double feature_scale_ = 1.0;
};

struct KernelTrainConfig {
    int steps = 600;
    int batch = 64;
    double lr = 2e-3;
    std::uint64_t seed = 0;
};

// Trains a "classifier" kernel's extractor + head on the dataset's labels
// (plus regression targets when provided); datasets without labels fall back
// to 4-way rotation prediction. Returns final training accuracy.
double train_kernel(EmbeddingKernel& kernel, const ImageDataset& data, const KernelTrainConfig& cfg);

// Sets feature_scale so that the summed per-dimension feature variance over
// `samples` dataset items is 1.
void calibrate_feature_scale(EmbeddingKernel& kernel, const ImageDataset& data, std::size_t samples,
                             std::uint64_t seed);

// Source of image batches: (batch_index, count) -> images.
using BatchSource = std::function<Tensor(std::uint64_t batch_index, std::size_t count)>;

// Images G(z) with z drawn from stream (seed, stream, batch_index).
BatchSource generator_source(Network& generator, std::uint64_t seed, std::string stream = "global");
// Dataset items drawn uniformly with replacement.
BatchSource dataset_source(const ImageDataset& data, std::uint64_t seed, std::string stream = "real");

struct GlobalFeatureCache {
    std::string kernel_name;
    std::vector<double> mean_feature;
    std::size_t num_samples = 0;
    std::string generator_checkpoint_hash;
    std::string created_at;
};

// Compensated (Kahan) running sum per feature dimension.
class StreamingMean {
public:
    explicit StreamingMean(std::size_t dim) : sum_(dim), comp_(dim) {}
    void add(std::span<const double> row);
    std::size_t count() const { return n_; }
    std::vector<double> mean() const;

private:
    std::vector<double> sum_, comp_;
    std::size_t n_ = 0;
};

GlobalFeatureCache compute_global_features(EmbeddingKernel& kernel, const BatchSource& source,
                                           std::size_t num_samples, std::size_t batch_size,
                                           const std::string& generator_hash = "");
GlobalFeatureCache compute_global_features(EmbeddingKernel& kernel, Network& generator, std::size_t num_samples,
                                           std::size_t batch_size, std::uint64_t seed,
                                           const std::string& generator_hash = "");

// Sample-size weighted average of caches built with the same kernel.
GlobalFeatureCache merge_caches(const std::vector<GlobalFeatureCache>& parts);

struct SamplingErrorPoint {
    std::size_t n = 0;
    double mean_error = 0.0;  // mean over trials of ||mean_N - reference||_2
    double std_error = 0.0;
};

// Trial t draws latents from seed + t with the same batching as
// compute_global_features, and records the running mean after exactly N
// samples for every requested N, so trial 0 with the reference's seed and
// N = reference.num_samples reproduces the reference exactly.
std::vector<SamplingErrorPoint> estimate_sampling_error(EmbeddingKernel& kernel, Network& generator,
                                                        std::vector<std::size_t> sample_sizes, int trials,
                                                        const GlobalFeatureCache& reference,
                                                        std::size_t batch_size, std::uint64_t seed);

// Least-squares slope of log(error) against log(N).
double loglog_slope(const std::vector<SamplingErrorPoint>& curve);

// Binary array + JSON sidecar under `root`, keyed by (kernel, generator hash).
std::filesystem::path cache_path(const std::filesystem::path& root, const std::string& kernel_name,
                                 const std::string& generator_hash);
void save_cache(const std::filesystem::path& root, const GlobalFeatureCache& cache);
std::optional<GlobalFeatureCache> load_cache(const std::filesystem::path& root, const std::string& kernel_name,
                                             const std::string& generator_hash);

// Lookup, recomputing (and persisting) on miss or sample-count mismatch.
GlobalFeatureCache load_or_compute_cache(const std::filesystem::path& root, EmbeddingKernel& kernel,
                                         Network& generator, const std::string& generator_hash,
                                         std::size_t num_samples, std::size_t batch_size, std::uint64_t seed);

}  // namespace ndgan
