#pragma once

// Training objectives: embedding-space distribution matching, wavelet feature
// distillation into the student discriminator, the logistic adversarial terms
// with R1, and the weighted total.
//
// Every loss returns its value together with the gradient the caller needs
// (w.r.t. student images or discriminator taps); parameter gradients are only
// ever accumulated into the networks that the loss is meant to train.

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "ndgan/checkpoint.hpp"
#include "ndgan/kernels.hpp"
#include "ndgan/layers.hpp"
#include "ndgan/nets.hpp"
#include "ndgan/tensor.hpp"

namespace ndgan {

struct LossWeights {
    double lambda_kernel_a = 20.0;
    double lambda_kernel_b = 15.0;
    double lambda_nickel = 10.0;
    double r1_gamma = 0.1;

    // Throws ConfigError on a negative or non-finite weight.
    void validate() const;
};

nlohmann::json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& j);

enum class DimeMode { paired, global, both };
DimeMode dime_mode_from_string(const std::string& s);
std::string to_string(DimeMode m);

struct LossValue {
    double value = 0.0;
    Tensor grad;  // w.r.t. the differentiated input; shape of that input
};

// Distance on precomputed embeddings (B, D). Paired mode: mean over the batch
// of the per-sample L1 distance to `teacher`. Global mode: L1 distance between
// `global_mean` and the batch mean. Both: their sum. Gradient w.r.t. `student`.
LossValue dime_on_features(const Tensor& student, const Tensor* teacher, const std::vector<double>* global_mean,
                           DimeMode mode);

// Same through a kernel; gradient w.r.t. the student images. Teacher images are
// embedded first so the kernel's cached pass is the student's.
LossValue dime_loss(EmbeddingKernel& kernel, const Tensor& student_images, const Tensor* teacher_images,
                    const GlobalFeatureCache* cache, DimeMode mode);

// Per-tap learnable 1x1 channel projection followed by a bilinear resize to
// the matching teacher-generator tap.
class FeatureProjection {
public:
    FeatureProjection() = default;
    // One entry per matched layer: (student channels, student size) ->
    // (teacher channels, teacher size).
    FeatureProjection(const std::vector<Shape>& student_items, const std::vector<Shape>& teacher_items,
                      std::uint64_t seed);

    std::size_t layers() const { return heads_.size(); }
    Tensor forward(std::size_t i, const Tensor& student_feat);
    // Gradient w.r.t. the student feature; accumulates projection grads when
    // param_grads is set.
    Tensor backward(std::size_t i, const Tensor& grad, bool param_grads);
    std::vector<Param*> params();

private:
    std::vector<std::unique_ptr<Sequential>> heads_;
};

// Detail-band wavelet distance between teacher maps and already projected
// student maps: per layer, the mean absolute difference of each of LH, HL, HH,
// averaged over the three bands, then averaged over layers. Gradient w.r.t.
// each projected map.
struct NickelDistance {
    double value = 0.0;
    std::vector<Tensor> grads;
};
NickelDistance nickel_distance(const std::vector<Tensor>& teacher, const std::vector<Tensor>& projected);

// Full loss through the projection. Returns gradients w.r.t. the student
// discriminator taps; projection grads accumulate when param_grads is set.
// Teacher features are constants.
struct NickelResult {
    double value = 0.0;
    std::vector<Tensor> tap_grads;
};
NickelResult nickel_loss(const std::vector<Tensor>& teacher_feats, const std::vector<Tensor>& student_feats,
                         FeatureProjection& projection, bool param_grads = true);

double softplus(double x);
double sigmoid(double x);

// Non-saturating generator term mean_i softplus(-logit_i) and its gradient
// w.r.t. the logits.
LossValue generator_logistic(const Tensor& fake_logits);
// mean softplus(-real) + mean softplus(fake); gradients w.r.t. both logit
// tensors are returned in `real_grad` / `fake_grad`.
struct DiscriminatorLogistic {
    double value = 0.0;
    Tensor real_grad, fake_grad;
};
DiscriminatorLogistic discriminator_logistic(const Tensor& real_logits, const Tensor& fake_logits);

// Value-only evaluation of the dual-discriminator objective. g_loss averages
// the generator term over D^T and D^S; dS_loss is D^S's logistic loss plus
// (gamma / 2) * mean ||grad_x D^S(real)||^2.
struct AdversarialLosses {
    double g_loss = 0.0;
    double ds_loss = 0.0;
    double r1 = 0.0;
};
AdversarialLosses adversarial_losses(const Tensor& real, const Tensor& fake, Network& d_teacher, Network& d_student,
                                     double r1_gamma);

// Generator step: backpropagates the non-saturating term through every given
// discriminator without touching their parameters and returns the gradient
// w.r.t. `fake`. With two discriminators each contributes half; the per-
// discriminator contributions are returned in `terms`.
struct GeneratorAdversarial {
    std::vector<double> terms;
    double value = 0.0;
    Tensor grad;
};
GeneratorAdversarial generator_adversarial(const std::vector<Network*>& discriminators, const Tensor& fake);

// Discriminator step: accumulates parameter gradients of the logistic loss
// and, when r1_weight > 0, of r1_weight * (gamma / 2) * mean ||grad_x D(real)||^2
// (r1_weight carries the lazy-regularization interval). The R1 parameter
// gradient uses a central-difference Hessian-vector product.
struct DiscriminatorStep {
    double logistic = 0.0;
    double r1 = 0.0;  // unweighted penalty value, 0 when skipped
    double mean_real_logit = 0.0;
    double mean_fake_logit = 0.0;
};
DiscriminatorStep discriminator_backward(Network& d, const Tensor& real, const Tensor& fake, double r1_gamma,
                                         double r1_weight);

// Gradient of sum_i D(x_i) w.r.t. the inputs (no parameter gradients).
Tensor input_gradient(Network& d, const Tensor& x);

struct LossComponents {
    double adv_teacherD = 0.0;
    double adv_studentD = 0.0;
    double dime_a = 0.0;
    double dime_b = 0.0;
    double nickel = 0.0;
};

struct LossBreakdown {
    double adv_teacherD = 0.0;
    double adv_studentD = 0.0;
    double dime_a = 0.0;
    double dime_b = 0.0;
    double nickel = 0.0;
    double total = 0.0;
};

// total = adv_teacherD + adv_studentD + la*dime_a + lb*dime_b + ln*nickel.
// Throws NumericError naming the first non-finite component.
LossBreakdown total_loss(const LossComponents& c, const LossWeights& w);
// Recomputes the total from a breakdown's components in the same order.
double recompute_total(const LossBreakdown& b, const LossWeights& w);

nlohmann::json to_json(const LossBreakdown& b);

}  // namespace ndgan
