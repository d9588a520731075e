#pragma once

#include <string>
#include <vector>

#include "ndgan/checkpoint.hpp"
#include "ndgan/layers.hpp"

namespace ndgan {

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.0;
    double beta2 = 0.99;
    double eps = 1e-8;
};

// Adam over a fixed parameter list. Moments are kept per parameter in the
// order given at construction.
class Adam {
public:
    Adam(std::vector<Param*> params, AdamConfig cfg);

    void step();
    long long steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

    void save(Checkpoint& ckpt, const std::string& prefix) const;
    void load(const Checkpoint& ckpt, const std::string& prefix);

private:
    std::vector<Param*> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    long long t_ = 0;
};

}  // namespace ndgan
