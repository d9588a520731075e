#pragma once

// Generative metrics over embedding point clouds: Frechet distance between
// Gaussian fits, kNN-manifold precision/recall, density/coverage.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "ndgan/data.hpp"
#include "ndgan/kernels.hpp"
#include "ndgan/nets.hpp"
#include "ndgan/tensor.hpp"

namespace ndgan {

struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> covariance;  // row-major dim x dim
    std::size_t n = 0;
    std::string kernel_name;

    std::size_t dim() const { return mean.size(); }
};

// Sample mean and unbiased (n - 1) covariance of the rows of `feats` (N, D).
FeatureStats feature_stats(const Tensor& feats, std::string kernel_name = "");

// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), clamped at 0.
double fid(const FeatureStats& a, const FeatureStats& b);

struct PrecisionRecall {
    double precision = 0.0;
    double recall = 0.0;
};
struct DensityCoverage {
    double density = 0.0;
    double coverage = 0.0;
};

// Squared distance from every row to its k-th nearest other row (self
// excluded by index).
std::vector<double> knn_radii_sq(const Tensor& points, int k);

PrecisionRecall precision_recall(const Tensor& real, const Tensor& fake, int k);
DensityCoverage density_coverage(const Tensor& real, const Tensor& fake, int k);

struct KnnMetrics {
    PrecisionRecall pr;
    DensityCoverage dc;
};
// All four kNN metrics from one pass over the real x fake pairs.
KnnMetrics knn_metrics(const Tensor& real, const Tensor& fake, int k);

struct MetricReport {
    double fid = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double density = 0.0;
    double coverage = 0.0;
    int k = 5;
    std::size_t n_real = 0;
    std::size_t n_fake = 0;
    std::string kernel_name;
    std::uint64_t seed = 0;
};

nlohmann::json to_json(const MetricReport& r);
MetricReport metric_report_from_json(const nlohmann::json& j);
std::string csv_header();
std::string csv_row(const std::string& label, const MetricReport& r);

// Embeds `count` items from a batch source into an (count, D) tensor.
Tensor embed_all(EmbeddingKernel& kernel, const BatchSource& source, std::size_t count, std::size_t batch_size = 256);

// Real items drawn without replacement (seeded permutation) from the dataset.
BatchSource real_source(const ImageDataset& data, std::uint64_t seed);

MetricReport report_from_features(const Tensor& real, const Tensor& fake, int k, const std::string& kernel_name,
                                  std::uint64_t seed);

// Samples `n_samples` fakes and as many reals, embeds both with the metrics
// kernel, and computes every metric.
MetricReport evaluate_pair(Network& generator, const ImageDataset& data, EmbeddingKernel& kernel,
                           std::size_t n_samples, int k = 5, std::uint64_t seed = 0);

// Generator-vs-generator comparison on independent latent streams.
MetricReport evaluate_generators(Network& a, Network& b, EmbeddingKernel& kernel, std::size_t n_samples, int k = 5,
                                 std::uint64_t seed = 0);

}  // namespace ndgan
