#include "ndgan/nets.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "ndgan/error.hpp"
#include "ndgan/hash.hpp"

namespace ndgan {
namespace {

constexpr double kLreluGain = 1.3867504905630728;  // sqrt(2 / (1 + 0.2^2))

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int conv_resolution(const LayerDesc& d) { return d.resample == Resample::down ? 2 * d.size : d.size; }

std::string op_name(BlockOp op) {
    switch (op) {
        case BlockOp::dense: return "dense";
        case BlockOp::conv: return "conv";
        case BlockOp::to_rgb: return "to_rgb";
        case BlockOp::from_rgb: return "from_rgb";
        case BlockOp::logit: return "logit";
    }
    return "?";
}

BlockOp op_from_name(const std::string& s) {
    if (s == "dense") return BlockOp::dense;
    if (s == "conv") return BlockOp::conv;
    if (s == "to_rgb") return BlockOp::to_rgb;
    if (s == "from_rgb") return BlockOp::from_rgb;
    if (s == "logit") return BlockOp::logit;
    throw ConfigError("netspec: unknown layer op '" + s + "'");
}

std::string resample_name(Resample r) {
    switch (r) {
        case Resample::none: return "none";
        case Resample::up: return "up";
        case Resample::down: return "down";
    }
    return "?";
}

Resample resample_from_name(const std::string& s) {
    if (s == "none") return Resample::none;
    if (s == "up") return Resample::up;
    if (s == "down") return Resample::down;
    throw ConfigError("netspec: unknown resample '" + s + "'");
}

// dst[i,j,k] = src[i,j,k] for the leading (a,b,c) corner of src.
void copy_corner(const Tensor& src, std::size_t sa, std::size_t sb, std::size_t sc, Tensor& dst, std::size_t da,
                 std::size_t db, std::size_t dc) {
    if (da > sa || db > sb || dc > sc || src.numel() != sa * sb * sc || dst.numel() != da * db * dc) {
        throw InputError("init_from: source network is narrower than destination");
    }
    for (std::size_t i = 0; i < da; ++i) {
        for (std::size_t j = 0; j < db; ++j) {
            for (std::size_t k = 0; k < dc; ++k) dst[(i * db + j) * dc + k] = src[(i * sb + j) * sc + k];
        }
    }
}

}  // namespace

int channel_width(int base_channels, int size) {
    if (size <= 8) return base_channels;
    return std::max(1, base_channels * 8 / size);
}

int scaled_width(int width, double multiplier) {
    return std::max(1, static_cast<int>(std::floor(static_cast<double>(width) * multiplier + 0.5)));
}

NetworkSpec default_generator_spec(int resolution, int latent_dim, int base_channels) {
    if (!is_power_of_two(resolution) || resolution < 8) {
        throw ConfigError("netspec: resolution must be a power of two >= 8, got " + std::to_string(resolution));
    }
    NetworkSpec spec;
    spec.kind = NetKind::generator;
    spec.latent_dim = latent_dim;
    spec.resolution = resolution;
    spec.base_channels = base_channels;
    spec.layers.push_back({BlockOp::dense, Resample::none, latent_dim, channel_width(base_channels, 4), 4, 0});
    for (int s = 8; s <= resolution; s *= 2) {
        spec.layers.push_back(
            {BlockOp::conv, Resample::up, channel_width(base_channels, s / 2), channel_width(base_channels, s), s, 3});
        if (s == std::max(8, resolution / 4)) spec.feature_taps.push_back(static_cast<int>(spec.layers.size()) - 1);
    }
    spec.layers.push_back({BlockOp::to_rgb, Resample::none, channel_width(base_channels, resolution), 3, resolution, 3});
    return spec;
}

NetworkSpec default_discriminator_spec(int resolution, int base_channels) {
    if (!is_power_of_two(resolution) || resolution < 8) {
        throw ConfigError("netspec: resolution must be a power of two >= 8, got " + std::to_string(resolution));
    }
    NetworkSpec spec;
    spec.kind = NetKind::discriminator;
    spec.resolution = resolution;
    spec.base_channels = base_channels;
    spec.layers.push_back(
        {BlockOp::from_rgb, Resample::none, 3, channel_width(base_channels, resolution), resolution, 1});
    for (int s = resolution / 2; s >= 4; s /= 2) {
        spec.layers.push_back({BlockOp::conv, Resample::down, channel_width(base_channels, 2 * s),
                               channel_width(base_channels, s), s, 3});
        if (s == std::max(4, resolution / 4)) spec.feature_taps.push_back(static_cast<int>(spec.layers.size()) - 1);
    }
    spec.layers.push_back({BlockOp::logit, Resample::none, channel_width(base_channels, 4), 1, 1, 0});
    return spec;
}

int layer_input_size(const NetworkSpec& spec, std::size_t index) {
    const LayerDesc& d = spec.layers.at(index);
    switch (d.op) {
        case BlockOp::dense: return 1;
        case BlockOp::conv: return d.resample == Resample::up ? d.size / 2 : d.resample == Resample::down ? 2 * d.size : d.size;
        case BlockOp::logit: return index == 0 ? 1 : spec.layers[index - 1].size;
        default: return d.size;
    }
}

void validate(const NetworkSpec& spec) {
    if (!is_power_of_two(spec.resolution) || spec.resolution < 8) {
        throw ConfigError("netspec: resolution must be a power of two >= 8, got " + std::to_string(spec.resolution));
    }
    if (!(spec.channel_multiplier > 0.0 && spec.channel_multiplier <= 1.0)) {
        throw ConfigError("netspec: channel_multiplier must lie in (0, 1]");
    }
    if (spec.layers.empty()) throw ConfigError("netspec: empty layer list");
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerDesc& d = spec.layers[i];
        if (d.in_ch < 1 || d.out_ch < 1) {
            throw ConfigError("netspec: layer " + std::to_string(i) + " has a channel count below 1");
        }
        if (d.size < 1) throw ConfigError("netspec: layer " + std::to_string(i) + " has invalid size");
        if ((d.op == BlockOp::conv || d.op == BlockOp::to_rgb || d.op == BlockOp::from_rgb) && d.kernel % 2 == 0) {
            throw ConfigError("netspec: layer " + std::to_string(i) + " needs an odd kernel");
        }
        if (i > 0) {
            const LayerDesc& prev = spec.layers[i - 1];
            if (prev.out_ch != d.in_ch) {
                throw ConfigError("netspec: channel mismatch between layers " + std::to_string(i - 1) + " and " +
                                  std::to_string(i));
            }
            if (d.op != BlockOp::logit && layer_input_size(spec, i) != prev.size) {
                throw ConfigError("netspec: spatial mismatch at layer " + std::to_string(i));
            }
        }
    }
    if (spec.kind == NetKind::generator) {
        if (spec.layers.front().op != BlockOp::dense || spec.layers.front().in_ch != spec.latent_dim) {
            throw ConfigError("netspec: generator must start with a dense layer from latent_dim");
        }
        if (spec.layers.back().op != BlockOp::to_rgb || spec.layers.back().out_ch != 3 ||
            spec.layers.back().size != spec.resolution) {
            throw ConfigError("netspec: generator must end with to_rgb at full resolution");
        }
    } else {
        if (spec.layers.front().op != BlockOp::from_rgb || spec.layers.front().in_ch != 3 ||
            spec.layers.front().size != spec.resolution) {
            throw ConfigError("netspec: discriminator must start with from_rgb at full resolution");
        }
        if (spec.layers.back().op != BlockOp::logit || spec.layers.back().out_ch != 1) {
            throw ConfigError("netspec: discriminator must end with a single-logit layer");
        }
    }
    for (int t : spec.feature_taps) {
        if (t < 0 || t >= static_cast<int>(spec.layers.size())) {
            throw ConfigError("netspec: feature tap " + std::to_string(t) + " is not a valid layer index");
        }
    }
}

double compression_rate(double flops_teacher, double flops_student) { return 1.0 - flops_student / flops_teacher; }

CostReport count_cost(const NetworkSpec& spec, const NetworkSpec* reference) {
    CostReport r;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerDesc& d = spec.layers[i];
        const auto in = static_cast<std::uint64_t>(d.in_ch);
        const auto out = static_cast<std::uint64_t>(d.out_ch);
        switch (d.op) {
            case BlockOp::dense: {
                const std::uint64_t outs = out * static_cast<std::uint64_t>(d.size) * d.size;
                r.params += in * outs + outs;
                r.flops += in * outs;
                break;
            }
            case BlockOp::logit: {
                const auto s = static_cast<std::uint64_t>(layer_input_size(spec, i));
                const std::uint64_t ins = in * s * s;
                r.params += ins * out + out;
                r.flops += ins * out;
                break;
            }
            default: {
                const auto k = static_cast<std::uint64_t>(d.kernel);
                const auto s = static_cast<std::uint64_t>(conv_resolution(d));
                r.params += k * k * in * out + out;
                r.flops += k * k * in * out * s * s;
                break;
            }
        }
    }
    if (reference) {
        const CostReport ref = count_cost(*reference);
        r.compression_rate = compression_rate(static_cast<double>(ref.flops), static_cast<double>(r.flops));
    }
    return r;
}

NetworkSpec scale_channels(const NetworkSpec& teacher, double multiplier) {
    if (!(multiplier > 0.0 && multiplier <= 1.0)) throw ConfigError("prune: multiplier must lie in (0, 1]");
    NetworkSpec s = teacher;
    s.channel_multiplier = teacher.channel_multiplier * multiplier;
    for (LayerDesc& d : s.layers) {
        if (d.op != BlockOp::dense && d.op != BlockOp::from_rgb) d.in_ch = scaled_width(d.in_ch, multiplier);
        if (d.op != BlockOp::to_rgb && d.op != BlockOp::logit) d.out_ch = scaled_width(d.out_ch, multiplier);
    }
    return s;
}

NetworkSpec prune_spec(const NetworkSpec& teacher, double target_compression, double tolerance) {
    if (!(target_compression > 0.0 && target_compression < 1.0)) {
        throw ConfigError("prune: target compression must lie in (0, 1), got " + std::to_string(target_compression));
    }
    validate(teacher);
    const double teacher_flops = static_cast<double>(count_cost(teacher).flops);
    constexpr int kSteps = 4000;
    double best_gap = 2.0;
    NetworkSpec best;
    for (int k = kSteps; k >= 1; --k) {
        const double m = static_cast<double>(k) / kSteps;
        NetworkSpec cand = scale_channels(teacher, m);
        const double achieved = compression_rate(teacher_flops, static_cast<double>(count_cost(cand).flops));
        const double gap = std::fabs(achieved - target_compression);
        if (gap < best_gap) {
            best_gap = gap;
            best = std::move(cand);
        }
    }
    if (best_gap > tolerance) {
        throw InfeasibleError("prune: target compression " + std::to_string(target_compression) +
                              " unreachable with >=1 channel per layer (closest miss " + std::to_string(best_gap) +
                              ")");
    }
    return best;
}

nlohmann::json to_json(const NetworkSpec& spec) {
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerDesc& d : spec.layers) {
        layers.push_back({{"op", op_name(d.op)},
                          {"resample", resample_name(d.resample)},
                          {"in_ch", d.in_ch},
                          {"out_ch", d.out_ch},
                          {"size", d.size},
                          {"kernel", d.kernel}});
    }
    return {{"schema", "netspec.v1"},
            {"kind", spec.kind == NetKind::generator ? "generator" : "discriminator"},
            {"latent_dim", spec.latent_dim},
            {"resolution", spec.resolution},
            {"base_channels", spec.base_channels},
            {"channel_multiplier", spec.channel_multiplier},
            {"layers", layers},
            {"feature_taps", spec.feature_taps}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
    try {
        if (j.at("schema").get<std::string>() != "netspec.v1") {
            throw ConfigError("netspec: unsupported schema " + j.at("schema").dump());
        }
        NetworkSpec spec;
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "generator") {
            spec.kind = NetKind::generator;
        } else if (kind == "discriminator") {
            spec.kind = NetKind::discriminator;
        } else {
            throw ConfigError("netspec: unknown kind " + kind);
        }
        spec.latent_dim = j.value("latent_dim", 0);
        spec.resolution = j.at("resolution").get<int>();
        spec.base_channels = j.at("base_channels").get<int>();
        spec.channel_multiplier = j.value("channel_multiplier", 1.0);
        for (const auto& l : j.at("layers")) {
            spec.layers.push_back({op_from_name(l.at("op").get<std::string>()),
                                   resample_from_name(l.value("resample", std::string("none"))),
                                   l.at("in_ch").get<int>(), l.at("out_ch").get<int>(), l.at("size").get<int>(),
                                   l.value("kernel", 3)});
        }
        spec.feature_taps = j.value("feature_taps", std::vector<int>{});
        validate(spec);
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("netspec: malformed document: ") + e.what());
    }
}

std::string spec_hash(const NetworkSpec& spec) { return sha256_hex(to_json(spec).dump()); }

// ---------------------------------------------------------------- Network

Network::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    validate(spec_);
    Rng rng(seed, spec_.kind == NetKind::generator ? "init.generator" : "init.discriminator");
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        const LayerDesc& d = spec_.layers[i];
        const auto in = static_cast<std::size_t>(d.in_ch);
        const auto out = static_cast<std::size_t>(d.out_ch);
        const auto size = static_cast<std::size_t>(d.size);
        const std::string prefix = "block" + std::to_string(i);
        Sequential block;
        switch (d.op) {
            case BlockOp::dense:
                block.add(prefix, std::make_unique<Dense>(in, out * size * size, rng, kLreluGain));
                block.add(prefix, std::make_unique<Reshape>(Shape{out, size, size}));
                block.add(prefix, std::make_unique<LeakyRelu>());
                break;
            case BlockOp::conv:
                if (d.resample == Resample::up) block.add(prefix, std::make_unique<UpsampleNearest2x>());
                block.add(prefix, std::make_unique<Conv2d>(in, out, static_cast<std::size_t>(d.kernel), rng, kLreluGain));
                block.add(prefix, std::make_unique<LeakyRelu>());
                if (d.resample == Resample::down) block.add(prefix, std::make_unique<AvgPool2x>());
                break;
            case BlockOp::to_rgb:
                block.add(prefix, std::make_unique<Conv2d>(in, out, static_cast<std::size_t>(d.kernel), rng, 1.0));
                block.add(prefix, std::make_unique<Tanh>());
                break;
            case BlockOp::from_rgb:
                block.add(prefix, std::make_unique<Conv2d>(in, out, static_cast<std::size_t>(d.kernel), rng, kLreluGain));
                block.add(prefix, std::make_unique<LeakyRelu>());
                break;
            case BlockOp::logit: {
                const auto s = static_cast<std::size_t>(layer_input_size(spec_, i));
                block.add(prefix, std::make_unique<Dense>(in * s * s, out, rng, 1.0));
                break;
            }
        }
        blocks_.push_back(std::move(block));
    }
}

Network::Output Network::forward(const Tensor& x) {
    const Shape want = input_item_shape();
    if (x.rank() != want.size() + 1 || !std::equal(want.begin(), want.end(), x.shape().begin() + 1)) {
        throw InputError("network: expected input items of shape " + shape_str(want) + ", got " +
                         shape_str(x.shape()));
    }
    Output o;
    Tensor h = x;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        h = blocks_[i].forward(h);
        for (int t : spec_.feature_taps) {
            if (t == static_cast<int>(i)) o.taps.push_back(h);
        }
    }
    o.out = std::move(h);
    return o;
}

Tensor Network::backward(const Tensor& grad_out, std::span<const Tensor> tap_grads, bool param_grads) {
    if (!tap_grads.empty() && tap_grads.size() != spec_.feature_taps.size()) {
        throw InputError("network: expected one tap gradient per feature tap");
    }
    Tensor g = grad_out;
    for (std::size_t bi = blocks_.size(); bi-- > 0;) {
        for (std::size_t t = 0; t < tap_grads.size(); ++t) {
            if (spec_.feature_taps[t] == static_cast<int>(bi) && !tap_grads[t].empty()) g += tap_grads[t];
        }
        g = blocks_[bi].backward(g, param_grads);
    }
    return g;
}

std::vector<Param*> Network::params() {
    std::vector<Param*> out;
    for (auto& b : blocks_) {
        for (Param* p : b.params()) out.push_back(p);
    }
    return out;
}

Shape Network::input_item_shape() const {
    if (spec_.kind == NetKind::generator) return {static_cast<std::size_t>(spec_.latent_dim)};
    const auto r = static_cast<std::size_t>(spec_.resolution);
    return {3, r, r};
}

Shape Network::output_item_shape() const {
    if (spec_.kind == NetKind::discriminator) return {1};
    const auto r = static_cast<std::size_t>(spec_.resolution);
    return {3, r, r};
}

Shape Network::tap_item_shape(std::size_t tap) const {
    const LayerDesc& d = spec_.layers.at(static_cast<std::size_t>(spec_.feature_taps.at(tap)));
    if (d.op == BlockOp::logit) return {1};
    return {static_cast<std::size_t>(d.out_ch), static_cast<std::size_t>(d.size), static_cast<std::size_t>(d.size)};
}

void Network::init_from(Network& source) {
    const NetworkSpec& ss = source.spec_;
    if (ss.kind != spec_.kind || ss.layers.size() != spec_.layers.size() || ss.resolution != spec_.resolution) {
        throw InputError("init_from: topology mismatch");
    }
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        const LayerDesc& sd = ss.layers[i];
        const LayerDesc& dd = spec_.layers[i];
        if (sd.op != dd.op || sd.size != dd.size) throw InputError("init_from: topology mismatch at layer " + std::to_string(i));
        auto sp = source.blocks_[i].params();
        auto dp = blocks_[i].params();
        const auto so = static_cast<std::size_t>(sd.out_ch), si = static_cast<std::size_t>(sd.in_ch);
        const auto dout = static_cast<std::size_t>(dd.out_ch), din = static_cast<std::size_t>(dd.in_ch);
        switch (dd.op) {
            case BlockOp::dense: {
                const auto area = static_cast<std::size_t>(dd.size) * dd.size;
                copy_corner(sp[0]->value, so, area, si, dp[0]->value, dout, area, din);
                copy_corner(sp[1]->value, so, area, 1, dp[1]->value, dout, area, 1);
                break;
            }
            case BlockOp::logit: {
                const auto s = static_cast<std::size_t>(layer_input_size(spec_, i));
                copy_corner(sp[0]->value, so, si, s * s, dp[0]->value, dout, din, s * s);
                copy_corner(sp[1]->value, so, 1, 1, dp[1]->value, dout, 1, 1);
                break;
            }
            default: {
                const auto kk = static_cast<std::size_t>(dd.kernel) * dd.kernel;
                copy_corner(sp[0]->value, so, si, kk, dp[0]->value, dout, din, kk);
                copy_corner(sp[1]->value, so, 1, 1, dp[1]->value, dout, 1, 1);
                break;
            }
        }
    }
}

Network build_network(const NetworkSpec& spec, std::uint64_t seed) { return Network(spec, seed); }

}  // namespace ndgan
