#include "ndgan/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

#include "ndgan/error.hpp"
#include "ndgan/rng.hpp"
#include "ndgan/simd.hpp"

namespace ndgan {
namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix as_matrix(const FeatureStats& s) {
    return Eigen::Map<const Matrix>(s.covariance.data(), static_cast<Eigen::Index>(s.dim()),
                                    static_cast<Eigen::Index>(s.dim()));
}

// Eigenvalues of a symmetric matrix with tiny negative values clamped to 0.
Eigen::VectorXd clamped_eigenvalues(const Matrix& m, const char* what, Matrix* vectors = nullptr) {
    const Matrix sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericError(std::string("fid: eigendecomposition failed for ") + what);
    Eigen::VectorXd ev = es.eigenvalues();
    const double top = std::max(ev.cwiseAbs().maxCoeff(), 0.0);
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < 0.0) {
            if (ev[i] < -1e-6 * top - 1e-300) {
                throw NumericError(std::string("fid: ") + what + " has a significantly negative eigenvalue");
            }
            ev[i] = 0.0;
        }
    }
    if (vectors) *vectors = es.eigenvectors();
    return ev;
}

void check_sets(const Tensor& real, const Tensor& fake, int k) {
    if (real.rank() != 2 || fake.rank() != 2 || real.dim(1) != fake.dim(1)) {
        throw InputError("knn metrics: expected (N, D) point sets of equal dimension");
    }
    if (k < 1) throw InputError("knn metrics: k must be >= 1");
    if (real.dim(0) <= static_cast<std::size_t>(k) || fake.dim(0) <= static_cast<std::size_t>(k)) {
        throw InputError("knn metrics: need more than k = " + std::to_string(k) + " points in each set");
    }
}

}  // namespace

FeatureStats feature_stats(const Tensor& feats, std::string kernel_name) {
    if (feats.rank() != 2) throw InputError("feature_stats: expected (N, D) features");
    const std::size_t n = feats.dim(0), d = feats.dim(1);
    if (n < 2) throw InputError("feature_stats: need at least 2 samples");
    if (!feats.all_finite()) throw NumericError("feature_stats: non-finite features");
    FeatureStats s;
    s.n = n;
    s.kernel_name = std::move(kernel_name);
    s.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) simd::axpy(1.0, feats.item(i), s.mean);
    for (double& m : s.mean) m /= static_cast<double>(n);
    Matrix centered(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) centered(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = feats[i * d + j] - s.mean[j];
    }
    Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    cov = 0.5 * (cov + cov.transpose());
    s.covariance.assign(cov.data(), cov.data() + d * d);
    return s;
}

double fid(const FeatureStats& a, const FeatureStats& b) {
    if (a.dim() != b.dim() || a.covariance.size() != a.dim() * a.dim() || b.covariance.size() != b.dim() * b.dim()) {
        throw InputError("fid: feature dimensions differ");
    }
    if (!a.kernel_name.empty() && !b.kernel_name.empty() && a.kernel_name != b.kernel_name) {
        throw InputError("fid: statistics come from different kernels");
    }
    double mean_term = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
    const Matrix sa = as_matrix(a), sb = as_matrix(b);
    // tr((S_a S_b)^{1/2}) = tr((S_a^{1/2} S_b S_a^{1/2})^{1/2}), whose argument is symmetric.
    Matrix va;
    const Eigen::VectorXd ea = clamped_eigenvalues(sa, "covariance a", &va);
    const Matrix root_a = va * ea.cwiseSqrt().asDiagonal() * va.transpose();
    const Eigen::VectorXd ep = clamped_eigenvalues(root_a * sb * root_a, "covariance product");
    const double tr_sqrt = ep.cwiseSqrt().sum();
    const double value = mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    if (!std::isfinite(value)) throw NumericError("fid: non-finite result");
    return std::max(0.0, value);
}

std::vector<double> knn_radii_sq(const Tensor& points, int k) {
    const std::size_t n = points.dim(0), d = points.dim(1);
    if (k < 1 || n <= static_cast<std::size_t>(k)) throw InputError("knn: need more than k points");
    const auto& kt = simd::active();
    std::vector<double> radii(n), row(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t m = 0;
        const double* pi = points.data() + i * d;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) row[m++] = kt.sq_dist(pi, points.data() + j * d, d);
        }
        std::nth_element(row.begin(), row.begin() + (k - 1), row.end());
        radii[i] = row[static_cast<std::size_t>(k - 1)];
    }
    return radii;
}

KnnMetrics knn_metrics(const Tensor& real, const Tensor& fake, int k) {
    check_sets(real, fake, k);
    const std::size_t nr = real.dim(0), nf = fake.dim(0), d = real.dim(1);
    const std::vector<double> rr = knn_radii_sq(real, k);
    const std::vector<double> rf = knn_radii_sq(fake, k);
    const auto& kt = simd::active();
    std::vector<unsigned char> recalled(nr, 0), covered(nr, 0);
    std::size_t precise = 0, density_count = 0;
    for (std::size_t f = 0; f < nf; ++f) {
        const double* pf = fake.data() + f * d;
        bool inside_real = false;
        for (std::size_t r = 0; r < nr; ++r) {
            const double dist = kt.sq_dist(pf, real.data() + r * d, d);
            if (dist <= rr[r]) {
                inside_real = true;
                ++density_count;
                covered[r] = 1;
            }
            if (dist <= rf[f]) recalled[r] = 1;
        }
        precise += inside_real ? 1 : 0;
    }
    KnnMetrics m;
    m.pr.precision = static_cast<double>(precise) / static_cast<double>(nf);
    m.pr.recall = static_cast<double>(std::count(recalled.begin(), recalled.end(), 1)) / static_cast<double>(nr);
    m.dc.density = static_cast<double>(density_count) / (static_cast<double>(k) * static_cast<double>(nf));
    m.dc.coverage = static_cast<double>(std::count(covered.begin(), covered.end(), 1)) / static_cast<double>(nr);
    return m;
}

PrecisionRecall precision_recall(const Tensor& real, const Tensor& fake, int k) { return knn_metrics(real, fake, k).pr; }

DensityCoverage density_coverage(const Tensor& real, const Tensor& fake, int k) { return knn_metrics(real, fake, k).dc; }

nlohmann::json to_json(const MetricReport& r) {
    return {{"fid", r.fid},       {"precision", r.precision}, {"recall", r.recall},   {"density", r.density},
            {"coverage", r.coverage}, {"k", r.k},            {"n_real", r.n_real},   {"n_fake", r.n_fake},
            {"kernel", r.kernel_name}, {"seed", r.seed}};
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
    MetricReport r;
    r.fid = j.at("fid").get<double>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.density = j.at("density").get<double>();
    r.coverage = j.at("coverage").get<double>();
    r.k = j.value("k", 5);
    r.n_real = j.value("n_real", std::size_t{0});
    r.n_fake = j.value("n_fake", std::size_t{0});
    r.kernel_name = j.value("kernel", std::string());
    r.seed = j.value("seed", std::uint64_t{0});
    return r;
}

std::string csv_header() { return "checkpoint,fid,precision,recall,density,coverage,k,n_real,n_fake,kernel"; }

std::string csv_row(const std::string& label, const MetricReport& r) {
    std::ostringstream os;
    os.precision(10);
    os << label << ',' << r.fid << ',' << r.precision << ',' << r.recall << ',' << r.density << ',' << r.coverage
       << ',' << r.k << ',' << r.n_real << ',' << r.n_fake << ',' << r.kernel_name;
    return os.str();
}

Tensor embed_all(EmbeddingKernel& kernel, const BatchSource& source, std::size_t count, std::size_t batch_size) {
    const auto d = static_cast<std::size_t>(kernel.feature_dim());
    Tensor out({count, d});
    std::size_t done = 0;
    for (std::uint64_t b = 0; done < count; ++b) {
        const std::size_t n = std::min(batch_size, count - done);
        const Tensor f = kernel.embed(source(b, n));
        if (!f.all_finite()) throw NumericError("embed: non-finite feature in batch " + std::to_string(b));
        std::copy(f.values().begin(), f.values().end(), out.data() + done * d);
        done += n;
    }
    return out;
}

BatchSource real_source(const ImageDataset& data, std::uint64_t seed) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed, "metrics.real");
    std::shuffle(order.begin(), order.end(), rng.engine());
    auto shared = std::make_shared<std::vector<std::size_t>>(std::move(order));
    auto cursor = std::make_shared<std::size_t>(0);
    return [&data, shared, cursor](std::uint64_t, std::size_t count) {
        std::vector<std::size_t> idx(count);
        for (std::size_t i = 0; i < count; ++i) idx[i] = (*shared)[(*cursor)++ % shared->size()];
        return data.batch(idx);
    };
}

MetricReport report_from_features(const Tensor& real, const Tensor& fake, int k, const std::string& kernel_name,
                                  std::uint64_t seed) {
    MetricReport r;
    r.fid = fid(feature_stats(real, kernel_name), feature_stats(fake, kernel_name));
    const KnnMetrics m = knn_metrics(real, fake, k);
    r.precision = m.pr.precision;
    r.recall = m.pr.recall;
    r.density = m.dc.density;
    r.coverage = m.dc.coverage;
    r.k = k;
    r.n_real = real.dim(0);
    r.n_fake = fake.dim(0);
    r.kernel_name = kernel_name;
    r.seed = seed;
    return r;
}

MetricReport evaluate_pair(Network& generator, const ImageDataset& data, EmbeddingKernel& kernel,
                           std::size_t n_samples, int k, std::uint64_t seed) {
    if (data.size() < n_samples) {
        throw InputError("evaluate: dataset has " + std::to_string(data.size()) + " items, need " +
                         std::to_string(n_samples));
    }
    const Tensor real = embed_all(kernel, real_source(data, seed), n_samples);
    const Tensor fake = embed_all(kernel, generator_source(generator, seed, "metrics.fake"), n_samples);
    return report_from_features(real, fake, k, kernel.name(), seed);
}

MetricReport evaluate_generators(Network& a, Network& b, EmbeddingKernel& kernel, std::size_t n_samples, int k,
                                 std::uint64_t seed) {
    const Tensor fa = embed_all(kernel, generator_source(a, seed, "metrics.fake.a"), n_samples);
    const Tensor fb = embed_all(kernel, generator_source(b, seed, "metrics.fake.b"), n_samples);
    return report_from_features(fa, fb, k, kernel.name(), seed);
}

}  // namespace ndgan
