#include "ndgan/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ndgan/error.hpp"
#include "ndgan/simd.hpp"
#include "ndgan/wavelet.hpp"

namespace ndgan {
namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

Tensor logits_of(Network& d, const Tensor& x) { return d.forward(x).out; }

double mean_of(const Tensor& t) { return t.numel() ? sum(t) / static_cast<double>(t.numel()) : 0.0; }

}  // namespace

void LossWeights::validate() const {
    const std::pair<const char*, double> all[] = {{"lambda_kernel_a", lambda_kernel_a},
                                                  {"lambda_kernel_b", lambda_kernel_b},
                                                  {"lambda_nickel", lambda_nickel},
                                                  {"r1_gamma", r1_gamma}};
    for (const auto& [name, v] : all) {
        if (!std::isfinite(v) || v < 0.0) {
            throw ConfigError(std::string("loss weights: ") + name + " must be finite and >= 0");
        }
    }
}

nlohmann::json to_json(const LossWeights& w) {
    return {{"lambda_kernel_a", w.lambda_kernel_a},
            {"lambda_kernel_b", w.lambda_kernel_b},
            {"lambda_nickel", w.lambda_nickel},
            {"r1_gamma", w.r1_gamma}};
}

LossWeights loss_weights_from_json(const nlohmann::json& j) {
    LossWeights w;
    w.lambda_kernel_a = j.value("lambda_kernel_a", w.lambda_kernel_a);
    w.lambda_kernel_b = j.value("lambda_kernel_b", w.lambda_kernel_b);
    w.lambda_nickel = j.value("lambda_nickel", w.lambda_nickel);
    w.r1_gamma = j.value("r1_gamma", w.r1_gamma);
    w.validate();
    return w;
}

DimeMode dime_mode_from_string(const std::string& s) {
    if (s == "paired") return DimeMode::paired;
    if (s == "global") return DimeMode::global;
    if (s == "both") return DimeMode::both;
    throw ConfigError("unknown dime mode '" + s + "' (expected paired|global|both)");
}

std::string to_string(DimeMode m) {
    switch (m) {
        case DimeMode::paired: return "paired";
        case DimeMode::global: return "global";
        case DimeMode::both: return "both";
    }
    return "global";
}

// ------------------------------------------------------------------- DiME

LossValue dime_on_features(const Tensor& student, const Tensor* teacher, const std::vector<double>* global_mean,
                           DimeMode mode) {
    if (student.rank() != 2) throw InputError("dime: expected (B, D) features");
    const std::size_t b = student.dim(0), d = student.dim(1);
    const bool paired = mode != DimeMode::global;
    const bool global = mode != DimeMode::paired;
    if (paired) {
        if (!teacher) throw ConfigError("dime: paired mode needs teacher images");
        if (teacher->shape() != student.shape()) {
            throw InputError("dime: teacher batch " + shape_str(teacher->shape()) + " does not match student batch " +
                             shape_str(student.shape()));
        }
    }
    if (global) {
        if (!global_mean) throw ConfigError("dime: global mode needs a global feature cache");
        if (global_mean->size() != d) throw InputError("dime: global cache has the wrong feature dimension");
    }
    LossValue out;
    out.grad = Tensor(student.shape());
    const double inv_b = 1.0 / static_cast<double>(b);
    if (paired) {
        for (std::size_t i = 0; i < b * d; ++i) {
            const double diff = student[i] - (*teacher)[i];
            out.value += std::fabs(diff) * inv_b;
            out.grad[i] += sign(diff) * inv_b;
        }
    }
    if (global) {
        for (std::size_t k = 0; k < d; ++k) {
            double m = 0.0;
            for (std::size_t i = 0; i < b; ++i) m += student[i * d + k];
            const double diff = m * inv_b - (*global_mean)[k];
            out.value += std::fabs(diff);
            for (std::size_t i = 0; i < b; ++i) out.grad[i * d + k] += sign(diff) * inv_b;
        }
    }
    return out;
}

LossValue dime_loss(EmbeddingKernel& kernel, const Tensor& student_images, const Tensor* teacher_images,
                    const GlobalFeatureCache* cache, DimeMode mode) {
    if (mode != DimeMode::paired && !cache) throw ConfigError("dime: global mode needs a global feature cache");
    if (mode != DimeMode::global) {
        if (!teacher_images) throw ConfigError("dime: paired mode needs teacher images");
        if (teacher_images->dim(0) != student_images.dim(0)) {
            throw InputError("dime: teacher and student batch sizes differ");
        }
    }
    if (cache && cache->kernel_name != kernel.name()) {
        throw ConfigError("dime: cache belongs to kernel '" + cache->kernel_name + "', not '" + kernel.name() + "'");
    }
    Tensor teacher_feats;
    if (mode != DimeMode::global) teacher_feats = kernel.embed(*teacher_images);
    const Tensor student_feats = kernel.embed(student_images);
    LossValue f = dime_on_features(student_feats, mode != DimeMode::global ? &teacher_feats : nullptr,
                                   cache ? &cache->mean_feature : nullptr, mode);
    return {f.value, kernel.backward(f.grad)};
}

// ----------------------------------------------------------------- NICKEL

FeatureProjection::FeatureProjection(const std::vector<Shape>& student_items, const std::vector<Shape>& teacher_items,
                                     std::uint64_t seed) {
    if (student_items.empty() || student_items.size() != teacher_items.size()) {
        throw ConfigError("nickel: need one projection per matched layer (L >= 1)");
    }
    Rng rng(seed, "init.projection");
    for (std::size_t i = 0; i < student_items.size(); ++i) {
        const Shape& s = student_items[i];
        const Shape& t = teacher_items[i];
        if (s.size() != 3 || t.size() != 3) throw ConfigError("nickel: taps must be (C, H, W) maps");
        auto head = std::make_unique<Sequential>();
        const std::string prefix = "proj" + std::to_string(i);
        head->add(prefix, std::make_unique<Conv2d>(s[0], t[0], 1, rng, 1.0));
        head->add(prefix, std::make_unique<BilinearResize>(t[1], t[2]));
        heads_.push_back(std::move(head));
    }
}

Tensor FeatureProjection::forward(std::size_t i, const Tensor& student_feat) { return heads_.at(i)->forward(student_feat); }

Tensor FeatureProjection::backward(std::size_t i, const Tensor& grad, bool param_grads) {
    return heads_.at(i)->backward(grad, param_grads);
}

std::vector<Param*> FeatureProjection::params() {
    std::vector<Param*> out;
    for (auto& h : heads_) {
        for (Param* p : h->params()) out.push_back(p);
    }
    return out;
}

NickelDistance nickel_distance(const std::vector<Tensor>& teacher, const std::vector<Tensor>& projected) {
    if (teacher.empty()) throw ConfigError("nickel: no matched layers (L = 0)");
    if (teacher.size() != projected.size()) throw InputError("nickel: teacher and student layer counts differ");
    const double inv_l = 1.0 / static_cast<double>(teacher.size());
    NickelDistance out;
    for (std::size_t l = 0; l < teacher.size(); ++l) {
        if (teacher[l].shape() != projected[l].shape()) {
            throw InputError("nickel: layer " + std::to_string(l) + " shape " + shape_str(projected[l].shape()) +
                             " does not match teacher " + shape_str(teacher[l].shape()));
        }
        const WaveletBands t = haar_decompose(teacher[l]);
        const WaveletBands p = haar_decompose(projected[l]);
        WaveletBands g;
        const std::pair<const Tensor*, const Tensor*> pairs[] = {{&t.lh, &p.lh}, {&t.hl, &p.hl}, {&t.hh, &p.hh}};
        Tensor* grads[] = {&g.lh, &g.hl, &g.hh};
        for (int band = 0; band < 3; ++band) {
            const Tensor& tb = *pairs[band].first;
            const Tensor& pb = *pairs[band].second;
            const double scale = inv_l / (3.0 * static_cast<double>(tb.numel()));
            Tensor& gb = *grads[band] = Tensor(pb.shape());
            for (std::size_t i = 0; i < tb.numel(); ++i) {
                const double diff = pb[i] - tb[i];
                out.value += std::fabs(diff) * scale;
                gb[i] = sign(diff) * scale;
            }
        }
        out.grads.push_back(haar_backward(g, projected[l].shape()));
    }
    return out;
}

NickelResult nickel_loss(const std::vector<Tensor>& teacher_feats, const std::vector<Tensor>& student_feats,
                         FeatureProjection& projection, bool param_grads) {
    if (teacher_feats.empty()) throw ConfigError("nickel: no matched layers (L = 0)");
    if (teacher_feats.size() != student_feats.size() || projection.layers() != teacher_feats.size()) {
        throw InputError("nickel: teacher, student and projection layer counts differ");
    }
    std::vector<Tensor> projected;
    projected.reserve(student_feats.size());
    for (std::size_t l = 0; l < student_feats.size(); ++l) projected.push_back(projection.forward(l, student_feats[l]));
    NickelDistance d = nickel_distance(teacher_feats, projected);
    NickelResult out{d.value, {}};
    for (std::size_t l = 0; l < student_feats.size(); ++l) {
        out.tap_grads.push_back(projection.backward(l, d.grads[l], param_grads));
    }
    return out;
}

// ------------------------------------------------------------ adversarial

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

LossValue generator_logistic(const Tensor& fake_logits) {
    const double inv = 1.0 / static_cast<double>(fake_logits.numel());
    LossValue out{0.0, Tensor(fake_logits.shape())};
    for (std::size_t i = 0; i < fake_logits.numel(); ++i) {
        out.value += softplus(-fake_logits[i]) * inv;
        out.grad[i] = -sigmoid(-fake_logits[i]) * inv;
    }
    return out;
}

DiscriminatorLogistic discriminator_logistic(const Tensor& real_logits, const Tensor& fake_logits) {
    DiscriminatorLogistic out{0.0, Tensor(real_logits.shape()), Tensor(fake_logits.shape())};
    const double inv_r = 1.0 / static_cast<double>(real_logits.numel());
    const double inv_f = 1.0 / static_cast<double>(fake_logits.numel());
    for (std::size_t i = 0; i < real_logits.numel(); ++i) {
        out.value += softplus(-real_logits[i]) * inv_r;
        out.real_grad[i] = -sigmoid(-real_logits[i]) * inv_r;
    }
    for (std::size_t i = 0; i < fake_logits.numel(); ++i) {
        out.value += softplus(fake_logits[i]) * inv_f;
        out.fake_grad[i] = sigmoid(fake_logits[i]) * inv_f;
    }
    return out;
}

Tensor input_gradient(Network& d, const Tensor& x) {
    const Tensor logits = logits_of(d, x);
    return d.backward(Tensor(logits.shape(), 1.0), false);
}

AdversarialLosses adversarial_losses(const Tensor& real, const Tensor& fake, Network& d_teacher, Network& d_student,
                                     double r1_gamma) {
    AdversarialLosses out;
    out.g_loss = 0.5 * (generator_logistic(logits_of(d_teacher, fake)).value +
                        generator_logistic(logits_of(d_student, fake)).value);
    const Tensor real_logits = logits_of(d_student, real);
    const Tensor fake_logits = logits_of(d_student, fake);
    out.ds_loss = discriminator_logistic(real_logits, fake_logits).value;
    if (r1_gamma > 0.0) {
        const Tensor g = input_gradient(d_student, real);
        out.r1 = 0.5 * r1_gamma * squared_norm(g) / static_cast<double>(real.dim(0));
        out.ds_loss += out.r1;
    }
    return out;
}

GeneratorAdversarial generator_adversarial(const std::vector<Network*>& discriminators, const Tensor& fake) {
    if (discriminators.empty()) throw ConfigError("adversarial: need at least one discriminator");
    const double share = 1.0 / static_cast<double>(discriminators.size());
    GeneratorAdversarial out;
    out.grad = Tensor(fake.shape());
    for (Network* d : discriminators) {
        LossValue term = generator_logistic(logits_of(*d, fake));
        term.grad *= share;
        out.grad += d->backward(term.grad, false);
        out.terms.push_back(share * term.value);
        out.value += share * term.value;
    }
    return out;
}

DiscriminatorStep discriminator_backward(Network& d, const Tensor& real, const Tensor& fake, double r1_gamma,
                                         double r1_weight) {
    DiscriminatorStep out;
    const Tensor real_logits = logits_of(d, real);
    // Logistic terms separate over real and fake, so each pass is
    // differentiated right after its own forward.
    {
        const double inv = 1.0 / static_cast<double>(real_logits.numel());
        Tensor g(real_logits.shape());
        for (std::size_t i = 0; i < real_logits.numel(); ++i) {
            out.logistic += softplus(-real_logits[i]) * inv;
            g[i] = -sigmoid(-real_logits[i]) * inv;
        }
        d.backward(g, true);
        out.mean_real_logit = mean_of(real_logits);
    }
    {
        const Tensor fake_logits = logits_of(d, fake);
        const double inv = 1.0 / static_cast<double>(fake_logits.numel());
        Tensor g(fake_logits.shape());
        for (std::size_t i = 0; i < fake_logits.numel(); ++i) {
            out.logistic += softplus(fake_logits[i]) * inv;
            g[i] = sigmoid(fake_logits[i]) * inv;
        }
        d.backward(g, true);
        out.mean_fake_logit = mean_of(fake_logits);
    }
    if (r1_gamma > 0.0 && r1_weight > 0.0) {
        const std::size_t b = real.dim(0);
        const Tensor v = input_gradient(d, real);
        out.r1 = 0.5 * r1_gamma * squared_norm(v) / static_cast<double>(b);
        double vmax = 0.0;
        for (double x : v.values()) vmax = std::max(vmax, std::fabs(x));
        if (vmax > 0.0) {
            // grad_theta (1/2)|grad_x D|^2 = d/de grad_theta D(x + e v) at e = 0.
            const double eps = 1e-4 / vmax;
            const double c = r1_weight * r1_gamma / static_cast<double>(b) / (2.0 * eps);
            for (const double s : {1.0, -1.0}) {
                Tensor xs = real;
                simd::axpy(s * eps, v.span(), xs.span());
                const Tensor logits = logits_of(d, xs);
                d.backward(Tensor(logits.shape(), s * c), true);
            }
        }
    }
    return out;
}

// ------------------------------------------------------------------ total

LossBreakdown total_loss(const LossComponents& c, const LossWeights& w) {
    const std::pair<const char*, double> parts[] = {{"adv_teacherD", c.adv_teacherD},
                                                    {"adv_studentD", c.adv_studentD},
                                                    {"dime_a", c.dime_a},
                                                    {"dime_b", c.dime_b},
                                                    {"nickel", c.nickel}};
    for (const auto& [name, v] : parts) {
        if (!std::isfinite(v)) throw NumericError(std::string("loss component ") + name + " is not finite");
    }
    LossBreakdown b{c.adv_teacherD, c.adv_studentD, c.dime_a, c.dime_b, c.nickel, 0.0};
    b.total = recompute_total(b, w);
    return b;
}

double recompute_total(const LossBreakdown& b, const LossWeights& w) {
    return b.adv_teacherD + b.adv_studentD + w.lambda_kernel_a * b.dime_a + w.lambda_kernel_b * b.dime_b +
           w.lambda_nickel * b.nickel;
}

nlohmann::json to_json(const LossBreakdown& b) {
    return {{"adv_teacherD", b.adv_teacherD}, {"adv_studentD", b.adv_studentD}, {"dime_a", b.dime_a},
            {"dime_b", b.dime_b},             {"nickel", b.nickel},             {"total", b.total}};
}

}  // namespace ndgan
