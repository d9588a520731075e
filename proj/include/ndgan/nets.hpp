#pragma once

// Desk-scale DCGAN-style generator/discriminator architectures, uniform
// channel pruning, and parameter/FLOPs accounting.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ndgan/layers.hpp"
#include "ndgan/tensor.hpp"

namespace ndgan {

enum class NetKind { generator, discriminator };

enum class BlockOp {
    dense,     // generator input: latent -> out_ch x size x size, then LeakyReLU
    conv,      // 3x3 conv + LeakyReLU, optionally preceded by 2x upsample or followed by 2x avgpool
    to_rgb,    // 3x3 conv to 3 channels + tanh
    from_rgb,  // 1x1 conv from 3 channels + LeakyReLU
    logit,     // flatten + dense to a single logit
};

enum class Resample { none, up, down };

struct LayerDesc {
    BlockOp op = BlockOp::conv;
    Resample resample = Resample::none;
    int in_ch = 0;
    int out_ch = 0;
    int size = 0;    // output spatial size (1 for the logit layer)
    int kernel = 3;  // conv kernel size; unused for dense/logit

    bool operator==(const LayerDesc&) const = default;
};

struct NetworkSpec {
    NetKind kind = NetKind::generator;
    int latent_dim = 0;  // generator only
    int resolution = 32;
    int base_channels = 32;
    double channel_multiplier = 1.0;
    std::vector<LayerDesc> layers;
    std::vector<int> feature_taps;

    bool operator==(const NetworkSpec&) const = default;
};

struct CostReport {
    std::uint64_t params = 0;
    std::uint64_t flops = 0;  // multiply-accumulates, conv/linear layers only
    std::optional<double> compression_rate;
};

// Channel width of a hidden layer operating at `size` for the given base.
int channel_width(int base_channels, int size);
// Round half up, floor at one channel.
int scaled_width(int width, double multiplier);

NetworkSpec default_generator_spec(int resolution = 32, int latent_dim = 64, int base_channels = 32);
NetworkSpec default_discriminator_spec(int resolution = 32, int base_channels = 32);

// Throws ConfigError describing the first violated invariant.
void validate(const NetworkSpec& spec);

// Spatial size of the input a layer consumes.
int layer_input_size(const NetworkSpec& spec, std::size_t index);

double compression_rate(double flops_teacher, double flops_student);

CostReport count_cost(const NetworkSpec& spec, const NetworkSpec* reference = nullptr);

// Same topology with every hidden width scaled by `multiplier`.
NetworkSpec scale_channels(const NetworkSpec& teacher, double multiplier);

// Picks the channel multiplier whose achieved FLOPs compression is closest to
// the target. Throws InfeasibleError if the best candidate misses the target by
// more than `tolerance`.
NetworkSpec prune_spec(const NetworkSpec& teacher, double target_compression, double tolerance = 0.02);

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);
std::string spec_hash(const NetworkSpec& spec);

class Network {
public:
    struct Output {
        Tensor out;
        std::vector<Tensor> taps;
    };

    Network(NetworkSpec spec, std::uint64_t seed);
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;
    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    const NetworkSpec& spec() const { return spec_; }

    Output forward(const Tensor& x);
    // `tap_grads` may be empty or hold one tensor per feature tap; empty
    // tensors mean "no gradient at this tap".
    Tensor backward(const Tensor& grad_out, std::span<const Tensor> tap_grads, bool param_grads);
    Tensor backward(const Tensor& grad_out, bool param_grads) { return backward(grad_out, {}, param_grads); }

    std::vector<Param*> params();
    void zero_grad() { zero_grads(params()); }

    Shape input_item_shape() const;
    Shape output_item_shape() const;
    Shape tap_item_shape(std::size_t tap) const;

    // Initializes from a (wider or equal) source by keeping the leading
    // channels of every layer. Equal specs give an exact copy.
    void init_from(Network& source);

private:
    NetworkSpec spec_;
    std::vector<Sequential> blocks_;
};

Network build_network(const NetworkSpec& spec, std::uint64_t seed);

}  // namespace ndgan
