#pragma once

// Differentiable building blocks with explicit backward passes.
//
// Every layer caches what its backward pass needs during forward(); a
// backward() call always refers to the most recent forward(). Parameter
// gradients accumulate into Param::grad only when `param_grads` is true, so a
// frozen network can still propagate gradients to its input.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ndgan/rng.hpp"
#include "ndgan/tensor.hpp"

namespace ndgan {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual std::string kind() const = 0;
    virtual Tensor forward(const Tensor& x) = 0;
    virtual Tensor backward(const Tensor& grad_out, bool param_grads) = 0;
    virtual std::vector<Param*> params() { return {}; }
    // Output shape for one item (no batch dimension).
    virtual Shape item_output_shape(const Shape& item_in) const = 0;
    // Multiply-accumulates for one item.
    virtual std::uint64_t macs(const Shape& /*item_in*/) const { return 0; }
};

class Dense final : public Layer {
public:
    Dense(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);
    std::string kind() const override { return "dense"; }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out, bool param_grads) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    Shape item_output_shape(const Shape& item_in) const override;
    std::uint64_t macs(const Shape& item_in) const override;

    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }

private:
    std::size_t in_, out_;
    Param weight_, bias_;
    Tensor input_;
};

// Stride-1 "same" convolution with odd square kernel.
class Conv2d final : public Layer {
public:
    Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t ksize, Rng& rng, double gain = 1.0);
    std::string kind() const override { return "conv"; }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out, bool param_grads) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    Shape item_output_shape(const Shape& item_in) const override;
    std::uint64_t macs(const Shape& item_in) const override;

    std::size_t in_channels() const { return in_ch_; }
    std::size_t out_channels() const { return out_ch_; }

private:
    std::size_t in_ch_, out_ch_, ksize_;
    Param weight_, bias_;
    Shape in_shape_;
    std::vector<double> cols_;  // im2col buffers for the whole batch
};

class LeakyRelu final : public Layer {
public:
    explicit LeakyRelu(double slope = 0.2) : slope_(slope) {}
    std::string kind() const override { return "lrelu"; }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out, bool param_grads) override;
    Shape item_output_shape(const Shape& item_in) const override { return item_in; }

private:
    double slope_;
    std::vector<unsigned char> positive_;
};

class Tanh final : public Layer {
public:
    std::string kind() const override { return "tanh"; }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out, bool param_grads) override;
    Shape item_output_shape(const Shape& item_in) const override { return item_in; }

private:
    Tensor output_;
};

class UpsampleNearest2x final : public Layer {
public:
    std::string kind() const override { return "upsample"; }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out, bool param_grads) override;
    Shape item_output_shape(const Shape& item_in) const override;
};

class AvgPool2x final : public Layer {
public:
    std::string kind() const override { return "avgpool"; }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out, bool param_grads) override;
    Shape item_output_shape(const Shape& item_in) const override;
};

// Bilinear resampling with half-pixel centers (align_corners = false).
class BilinearResize final : public Layer {
public:
    BilinearResize(std::size_t out_h, std::size_t out_w) : out_h_(out_h), out_w_(out_w) {}
    std::string kind() const override { return "bilinear"; }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out, bool param_grads) override;
    Shape item_output_shape(const Shape& item_in) const override;

private:
    struct Tap {
        std::size_t i0, i1;
        double w0, w1;
    };
    static std::vector<Tap> axis_taps(std::size_t in, std::size_t out);
    std::size_t out_h_, out_w_;
    Shape in_shape_;
};

// Reinterprets each item as the given shape.
class Reshape final : public Layer {
public:
    explicit Reshape(Shape item_shape) : item_shape_(std::move(item_shape)) {}
    std::string kind() const override { return "reshape"; }
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out, bool param_grads) override;
    Shape item_output_shape(const Shape& item_in) const override;

private:
    Shape item_shape_;
    Shape in_shape_;
};

// Ordered stack of layers with named parameters.
class Sequential {
public:
    void add(std::string prefix, std::unique_ptr<Layer> layer);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out, bool param_grads);
    std::vector<Param*> params();
    std::size_t size() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_.at(i); }
    Shape item_output_shape(Shape item_in) const;
    std::uint64_t macs(Shape item_in) const;

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

void zero_grads(const std::vector<Param*>& params);
std::size_t param_count(const std::vector<Param*>& params);
// Copies values by position; shapes must match.
void copy_param_values(const std::vector<Param*>& from, const std::vector<Param*>& to);

}  // namespace ndgan
