#include "ndgan/optim.hpp"

#include <cmath>

#include "ndgan/error.hpp"

namespace ndgan {

Adam::Adam(std::vector<Param*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
    for (const Param* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double step = cfg_.lr * std::sqrt(bc2) / (bc1 > 0.0 ? bc1 : 1.0);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& w = params_[i]->value;
        const Tensor& g = params_[i]->grad;
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t k = 0; k < w.numel(); ++k) {
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
            w[k] -= step * m[k] / (std::sqrt(v[k]) + cfg_.eps * std::sqrt(bc2));
        }
    }
}

void Adam::save(Checkpoint& ckpt, const std::string& prefix) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        ckpt.arrays[prefix + "/m/" + params_[i]->name] = m_[i];
        ckpt.arrays[prefix + "/v/" + params_[i]->name] = v_[i];
    }
    ckpt.meta["optim"][prefix] = {{"t", t_}, {"lr", cfg_.lr}};
}

void Adam::load(const Checkpoint& ckpt, const std::string& prefix) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto m = ckpt.arrays.find(prefix + "/m/" + params_[i]->name);
        const auto v = ckpt.arrays.find(prefix + "/v/" + params_[i]->name);
        if (m == ckpt.arrays.end() || v == ckpt.arrays.end()) {
            throw InputError("adam: missing optimizer state for " + params_[i]->name);
        }
        m_[i] = m->second;
        v_[i] = v->second;
    }
    t_ = ckpt.meta.at("optim").at(prefix).at("t").get<long long>();
}

}  // namespace ndgan
