#include "ndgan/kernels.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "ndgan/error.hpp"
#include "ndgan/optim.hpp"

namespace ndgan {
namespace {

constexpr double kLreluGain = 1.3867504905630728;

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

// Rotates a square CHW image by k quarter turns counter-clockwise.
void rotate_quarter(std::span<const double> src, std::span<double> dst, std::size_t c, std::size_t r, int k) {
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < r; ++y) {
            for (std::size_t x = 0; x < r; ++x) {
                std::size_t sy = y, sx = x;
                for (int t = 0; t < k; ++t) {
                    const std::size_t ny = sx, nx = r - 1 - sy;
                    sy = ny;
                    sx = nx;
                }
                dst[(ch * r + y) * r + x] = src[(ch * r + sy) * r + sx];
            }
        }
    }
}

}  // namespace

nlohmann::json to_json(const KernelSpec& s) {
    return {{"name", s.name},          {"kind", s.kind},   {"feature_dim", s.feature_dim},
            {"native_size", s.native_size}, {"width", s.width}, {"head_outputs", s.head_outputs},
            {"seed", s.seed}};
}

KernelSpec kernel_spec_from_json(const nlohmann::json& j) {
    KernelSpec s;
    s.name = j.at("name").get<std::string>();
    s.kind = j.value("kind", std::string("random"));
    s.feature_dim = j.value("feature_dim", 32);
    s.native_size = j.value("native_size", 16);
    s.width = j.value("width", 16);
    s.head_outputs = j.value("head_outputs", 0);
    s.seed = j.value("seed", std::uint64_t{0});
    return s;
}

EmbeddingKernel::EmbeddingKernel(KernelSpec spec) : spec_(std::move(spec)) {
    if (spec_.feature_dim < 1 || spec_.native_size < 8 || spec_.native_size % 8 != 0 || spec_.width < 1) {
        throw ConfigError("kernel: invalid spec for " + spec_.name);
    }
    Rng rng(spec_.seed, "kernel.init." + spec_.name);
    const auto n = static_cast<std::size_t>(spec_.native_size);
    const auto w = static_cast<std::size_t>(spec_.width);
    extractor_.add("resize", std::make_unique<BilinearResize>(n, n));
    extractor_.add("conv0", std::make_unique<Conv2d>(3, w, 3, rng, kLreluGain));
    extractor_.add("conv0", std::make_unique<LeakyRelu>());
    extractor_.add("conv0", std::make_unique<AvgPool2x>());
    extractor_.add("conv1", std::make_unique<Conv2d>(w, 2 * w, 3, rng, kLreluGain));
    extractor_.add("conv1", std::make_unique<LeakyRelu>());
    extractor_.add("conv1", std::make_unique<AvgPool2x>());
    extractor_.add("conv2", std::make_unique<Conv2d>(2 * w, 2 * w, 3, rng, kLreluGain));
    extractor_.add("conv2", std::make_unique<LeakyRelu>());
    extractor_.add("conv2", std::make_unique<AvgPool2x>());
    const std::size_t flat = 2 * w * (n / 8) * (n / 8);
    extractor_.add("proj", std::make_unique<Dense>(flat, static_cast<std::size_t>(spec_.feature_dim), rng, 1.0));
}

Tensor EmbeddingKernel::embed(const Tensor& images) {
    if (images.rank() != 4 || images.c() != 3) {
        throw InputError("embed: expected (B,3,H,W) images, got " + shape_str(images.shape()));
    }
    Tensor f = extractor_.forward(images);
    if (feature_scale_ != 1.0) f *= feature_scale_;
    return f;
}

Tensor EmbeddingKernel::backward(const Tensor& grad_features) {
    Tensor g = grad_features;
    if (feature_scale_ != 1.0) g *= feature_scale_;
    return extractor_.backward(g, false);
}

std::vector<Param*> EmbeddingKernel::params() { return extractor_.params(); }

Tensor EmbeddingKernel::head_forward(const Tensor& features) { return head_.forward(features); }

Tensor EmbeddingKernel::head_backward(const Tensor& grad_logits) { return head_.backward(grad_logits, true); }

void EmbeddingKernel::train_forward_backward_extractor(const Tensor& images, const Tensor& grad_features) {
    extractor_.forward(images);
    extractor_.backward(grad_features, true);
}

void EmbeddingKernel::save(Checkpoint& ckpt, const std::string& prefix) {
    ckpt.put_params(prefix, extractor_.params());
    ckpt.meta["kernels"][prefix] = {{"spec", to_json(spec_)}, {"feature_scale", feature_scale_}};
}

void EmbeddingKernel::load(const Checkpoint& ckpt, const std::string& prefix) {
    ckpt.get_params(prefix, extractor_.params());
    feature_scale_ = ckpt.meta.at("kernels").at(prefix).at("feature_scale").get<double>();
}

double train_kernel(EmbeddingKernel& kernel, const ImageDataset& data, const KernelTrainConfig& cfg) {
    const bool has_labels = data.num_classes() > 0;
    const int classes = has_labels ? data.num_classes() : 4;
    const std::size_t reg = has_labels ? data.regression_target(0).size() : 0;
    const std::size_t outs = static_cast<std::size_t>(classes) + reg;
    const auto fd = static_cast<std::size_t>(kernel.feature_dim());

    // Fresh head each time; it is discarded once the extractor is frozen.
    Sequential head;
    Rng hrng(cfg.seed, "kernel.head." + kernel.name());
    head.add("head", std::make_unique<LeakyRelu>());
    head.add("head", std::make_unique<Dense>(fd, outs, hrng, 1.0));

    std::vector<Param*> params = kernel.extractor_params();
    for (Param* p : head.params()) params.push_back(p);
    Adam opt(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    const double saved_scale = kernel.feature_scale();
    kernel.set_feature_scale(1.0);

    const auto r = static_cast<std::size_t>(data.resolution());
    double correct_recent = 0.0, seen_recent = 0.0;
    for (int step = 0; step < cfg.steps; ++step) {
        const auto idx = batch_indices(data.size(), static_cast<std::size_t>(cfg.batch), cfg.seed, "kernel.train",
                                       static_cast<std::uint64_t>(step));
        Tensor x = data.batch(idx);
        std::vector<int> labels(idx.size());
        if (has_labels) {
            for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = *data.label(idx[i]);
        } else {
            Rng rot(cfg.seed, "kernel.rot", static_cast<std::uint64_t>(step));
            Tensor rotated(x.shape());
            for (std::size_t i = 0; i < idx.size(); ++i) {
                labels[i] = static_cast<int>(rot.below(4));
                rotate_quarter(x.item(i), rotated.item(i), 3, r, labels[i]);
            }
            x = std::move(rotated);
        }
        zero_grads(params);
        Tensor feats = kernel.embed(x);
        Tensor out = head.forward(feats);
        const std::size_t b = idx.size();
        Tensor gout(out.shape());
        for (std::size_t i = 0; i < b; ++i) {
            const double* o = out.data() + i * outs;
            double mx = o[0];
            for (int k = 1; k < classes; ++k) mx = std::max(mx, o[k]);
            double z = 0.0;
            for (int k = 0; k < classes; ++k) z += std::exp(o[k] - mx);
            int argmax = 0;
            for (int k = 0; k < classes; ++k) {
                const double p = std::exp(o[k] - mx) / z;
                gout[i * outs + static_cast<std::size_t>(k)] = (p - (k == labels[i] ? 1.0 : 0.0)) / static_cast<double>(b);
                if (o[k] > o[argmax]) argmax = k;
            }
            if (step >= cfg.steps - 20) {
                correct_recent += argmax == labels[i] ? 1.0 : 0.0;
                seen_recent += 1.0;
            }
            if (reg) {
                const auto target = data.regression_target(idx[i]);
                for (std::size_t k = 0; k < reg; ++k) {
                    const std::size_t j = static_cast<std::size_t>(classes) + k;
                    gout[i * outs + j] = (o[j] - target[k]) / static_cast<double>(b);
                }
            }
        }
        Tensor gfeat = head.backward(gout, true);
        kernel.train_forward_backward_extractor(x, gfeat);
        opt.step();
    }
    kernel.set_feature_scale(saved_scale);
    return seen_recent > 0 ? correct_recent / seen_recent : 0.0;
}

void calibrate_feature_scale(EmbeddingKernel& kernel, const ImageDataset& data, std::size_t samples,
                             std::uint64_t seed) {
    if (samples < 2) throw ConfigError("kernel: calibration needs at least 2 samples");
    kernel.set_feature_scale(1.0);
    const auto d = static_cast<std::size_t>(kernel.feature_dim());
    std::vector<double> sum(d, 0.0), sum_sq(d, 0.0);
    std::size_t n = 0;
    for (std::uint64_t b = 0; n < samples; ++b) {
        const std::size_t count = std::min<std::size_t>(256, samples - n);
        const auto idx = batch_indices(data.size(), count, seed, "kernel.calibrate", b);
        const Tensor f = kernel.embed(data.batch(idx));
        for (std::size_t i = 0; i < count; ++i) {
            for (std::size_t k = 0; k < d; ++k) {
                sum[k] += f[i * d + k];
                sum_sq[k] += f[i * d + k] * f[i * d + k];
            }
        }
        n += count;
    }
    double total_var = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        const double m = sum[k] / static_cast<double>(n);
        total_var += std::max(0.0, sum_sq[k] / static_cast<double>(n) - m * m);
    }
    if (!(total_var > 0.0) || !std::isfinite(total_var)) throw NumericError("kernel: degenerate features during calibration");
    kernel.set_feature_scale(1.0 / std::sqrt(total_var));
}

BatchSource generator_source(Network& generator, std::uint64_t seed, std::string stream) {
    const auto dim = static_cast<std::size_t>(generator.spec().latent_dim);
    return [&generator, seed, stream, dim](std::uint64_t batch_index, std::size_t count) {
        return generator.forward(sample_latents(dim, count, seed, stream, batch_index)).out;
    };
}

BatchSource dataset_source(const ImageDataset& data, std::uint64_t seed, std::string stream) {
    return [&data, seed, stream](std::uint64_t batch_index, std::size_t count) {
        const auto idx = batch_indices(data.size(), count, seed, stream, batch_index);
        return data.batch(idx);
    };
}

void StreamingMean::add(std::span<const double> row) {
    for (std::size_t d = 0; d < sum_.size(); ++d) {
        const double y = row[d] - comp_[d];
        const double t = sum_[d] + y;
        comp_[d] = (t - sum_[d]) - y;
        sum_[d] = t;
    }
    ++n_;
}

std::vector<double> StreamingMean::mean() const {
    std::vector<double> m(sum_.size());
    for (std::size_t d = 0; d < m.size(); ++d) m[d] = sum_[d] / static_cast<double>(n_);
    return m;
}

GlobalFeatureCache compute_global_features(EmbeddingKernel& kernel, const BatchSource& source,
                                           std::size_t num_samples, std::size_t batch_size,
                                           const std::string& generator_hash) {
    if (batch_size < 1 || num_samples < batch_size) {
        throw ConfigError("global features: need num_samples >= batch_size >= 1");
    }
    StreamingMean acc(static_cast<std::size_t>(kernel.feature_dim()));
    for (std::uint64_t b = 0; acc.count() < num_samples; ++b) {
        const std::size_t count = std::min(batch_size, num_samples - acc.count());
        const Tensor f = kernel.embed(source(b, count));
        if (!f.all_finite()) {
            throw NumericError("global features: non-finite feature in batch " + std::to_string(b));
        }
        for (std::size_t i = 0; i < count; ++i) acc.add(f.item(i));
    }
    return {kernel.name(), acc.mean(), acc.count(), generator_hash, utc_now()};
}

GlobalFeatureCache compute_global_features(EmbeddingKernel& kernel, Network& generator, std::size_t num_samples,
                                           std::size_t batch_size, std::uint64_t seed,
                                           const std::string& generator_hash) {
    return compute_global_features(kernel, generator_source(generator, seed), num_samples, batch_size,
                                   generator_hash);
}

GlobalFeatureCache merge_caches(const std::vector<GlobalFeatureCache>& parts) {
    if (parts.empty()) throw InputError("merge_caches: nothing to merge");
    GlobalFeatureCache out = parts.front();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.kernel_name != out.kernel_name || p.mean_feature.size() != out.mean_feature.size()) {
            throw InputError("merge_caches: caches from different kernels");
        }
        total += p.num_samples;
    }
    std::fill(out.mean_feature.begin(), out.mean_feature.end(), 0.0);
    for (const auto& p : parts) {
        const double w = static_cast<double>(p.num_samples) / static_cast<double>(total);
        for (std::size_t d = 0; d < out.mean_feature.size(); ++d) out.mean_feature[d] += w * p.mean_feature[d];
    }
    out.num_samples = total;
    return out;
}

std::vector<SamplingErrorPoint> estimate_sampling_error(EmbeddingKernel& kernel, Network& generator,
                                                        std::vector<std::size_t> sample_sizes, int trials,
                                                        const GlobalFeatureCache& reference,
                                                        std::size_t batch_size, std::uint64_t seed) {
    if (sample_sizes.empty() || trials < 1) throw ConfigError("sampling error: need sizes and trials >= 1");
    if (reference.mean_feature.size() != static_cast<std::size_t>(kernel.feature_dim())) {
        throw InputError("sampling error: reference cache has the wrong feature dimension");
    }
    std::sort(sample_sizes.begin(), sample_sizes.end());
    sample_sizes.erase(std::unique(sample_sizes.begin(), sample_sizes.end()), sample_sizes.end());
    if (sample_sizes.front() == 0) throw ConfigError("sampling error: sample sizes must be positive");
    const std::size_t max_n = sample_sizes.back();
    std::vector<std::vector<double>> errors(sample_sizes.size());
    for (int t = 0; t < trials; ++t) {
        const BatchSource source = generator_source(generator, seed + static_cast<std::uint64_t>(t));
        StreamingMean acc(static_cast<std::size_t>(kernel.feature_dim()));
        std::size_t next = 0;
        for (std::uint64_t b = 0; acc.count() < max_n; ++b) {
            const std::size_t count = std::min(batch_size, max_n - acc.count());
            const Tensor f = kernel.embed(source(b, count));
            for (std::size_t i = 0; i < count; ++i) {
                acc.add(f.item(i));
                if (acc.count() == sample_sizes[next]) {
                    const auto m = acc.mean();
                    double e = 0.0;
                    for (std::size_t d = 0; d < m.size(); ++d) {
                        const double diff = m[d] - reference.mean_feature[d];
                        e += diff * diff;
                    }
                    errors[next].push_back(std::sqrt(e));
                    ++next;
                }
            }
        }
    }
    std::vector<SamplingErrorPoint> curve;
    for (std::size_t i = 0; i < sample_sizes.size(); ++i) {
        const auto& e = errors[i];
        double mean = 0.0;
        for (double v : e) mean += v;
        mean /= static_cast<double>(e.size());
        double var = 0.0;
        for (double v : e) var += (v - mean) * (v - mean);
        curve.push_back({sample_sizes[i], mean, e.size() > 1 ? std::sqrt(var / static_cast<double>(e.size() - 1)) : 0.0});
    }
    return curve;
}

double loglog_slope(const std::vector<SamplingErrorPoint>& curve) {
    if (curve.size() < 2) throw InputError("loglog_slope: need at least two points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const auto n = static_cast<double>(curve.size());
    for (const auto& p : curve) {
        const double x = std::log(static_cast<double>(p.n)), y = std::log(p.mean_error);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::filesystem::path cache_path(const std::filesystem::path& root, const std::string& kernel_name,
                                 const std::string& generator_hash) {
    return root / "global" / (kernel_name + "-" + generator_hash.substr(0, 16));
}

void save_cache(const std::filesystem::path& root, const GlobalFeatureCache& cache) {
    const auto base = cache_path(root, cache.kernel_name, cache.generator_checkpoint_hash);
    std::filesystem::create_directories(base.parent_path());
    const auto bin = std::filesystem::path(base.string() + ".bin");
    const auto tmp = std::filesystem::path(bin.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary);
        os.write(reinterpret_cast<const char*>(cache.mean_feature.data()),
                 static_cast<std::streamsize>(cache.mean_feature.size() * sizeof(double)));
        if (!os) throw Error("global cache: failed to write " + tmp.string());
    }
    std::filesystem::rename(tmp, bin);
    nlohmann::json j = {{"schema", "globalcache.v1"},
                        {"kernel", cache.kernel_name},
                        {"feature_dim", cache.mean_feature.size()},
                        {"num_samples", cache.num_samples},
                        {"generator_hash", cache.generator_checkpoint_hash},
                        {"created_at", cache.created_at}};
    std::ofstream(base.string() + ".json") << j.dump(2) << "\n";
}

std::optional<GlobalFeatureCache> load_cache(const std::filesystem::path& root, const std::string& kernel_name,
                                             const std::string& generator_hash) {
    const auto base = cache_path(root, kernel_name, generator_hash);
    std::ifstream js(base.string() + ".json");
    std::ifstream bin(base.string() + ".bin", std::ios::binary);
    if (!js || !bin) return std::nullopt;
    nlohmann::json j;
    js >> j;
    if (j.value("kernel", "") != kernel_name || j.value("generator_hash", "") != generator_hash) return std::nullopt;
    GlobalFeatureCache c;
    c.kernel_name = kernel_name;
    c.generator_checkpoint_hash = generator_hash;
    c.num_samples = j.at("num_samples").get<std::size_t>();
    c.created_at = j.value("created_at", "");
    c.mean_feature.resize(j.at("feature_dim").get<std::size_t>());
    bin.read(reinterpret_cast<char*>(c.mean_feature.data()),
             static_cast<std::streamsize>(c.mean_feature.size() * sizeof(double)));
    if (!bin) return std::nullopt;
    return c;
}

GlobalFeatureCache load_or_compute_cache(const std::filesystem::path& root, EmbeddingKernel& kernel,
                                         Network& generator, const std::string& generator_hash,
                                         std::size_t num_samples, std::size_t batch_size, std::uint64_t seed) {
    if (auto hit = load_cache(root, kernel.name(), generator_hash); hit && hit->num_samples == num_samples) {
        return *hit;
    }
    GlobalFeatureCache c = compute_global_features(kernel, generator, num_samples, batch_size, seed, generator_hash);
    save_cache(root, c);
    return c;
}

}  // namespace ndgan
