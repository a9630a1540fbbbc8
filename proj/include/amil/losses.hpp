#ifndef AMIL_LOSSES_HPP_
#define AMIL_LOSSES_HPP_

#include <cstddef>
#include <cstdint>
#include <span>

#include "amil/heatmap.hpp"
#include "amil/numkernel.hpp"

namespace amil {

struct LossConfig {
  double m_plus = 0.9;
  double m_minus = 0.1;
  double lambda = 1.0;       // weight of the squared bag/instance loss gap
  double prob_lambda = 1.0;  // rate in p = 1 − exp(−λh)
  double gamma = 0.5;        // equilibrium ratio for the balance variable
  double omega_k = 0.001;    // balance variable step size

  // Throws ConfigError when a field is outside its documented range.
  void validate() const;
};

/// Probabilities entering a logarithm are clamped to [kProbClamp, 1 − kProbClamp].
inline constexpr double kProbClamp = 1e-7;

// --- capsule-style margin loss on the bag embedding length -----------------

/// L = Y·max(0, m⁺ − |s|)² + (1 − Y)·max(0, |s| − m⁻)².
/// Throws DomainError if `bag_norm` is outside [0, 1) or the label is not 0/1.
double margin_loss(double bag_norm, int label, const LossConfig& cfg);
double margin_loss_grad(double bag_norm, int label, const LossConfig& cfg);

/// Margin loss of a bag embedding vector, with its gradient w.r.t. the vector.
struct VectorLoss {
  double value = 0.0;
  Vector grad;
};
VectorLoss margin_loss_embedding(std::span<const double> embedding, int label,
                                 const LossConfig& cfg);

// --- MIL probability model and coupled bag/instance losses ----------------

/// p = 1 − exp(−λh); throws DomainError for h < 0.
double instance_prob(double h, double lambda);

/// p(bag negative) = Π (1 − p_j); throws DomainError for inputs outside [0, 1].
double bag_prob_negative(std::span<const double> instance_probs);

/// Positive bags: loss_bag + λ·(loss_bag − mean instance loss)², with
/// instance pseudo-labels u = 1(q ≥ 0.5). Negative bags: mean instance loss
/// with u = 0. `bag_prob` is the probability that the bag is positive.
double coupled_bag_loss(double bag_prob, std::span<const double> instance_probs, int label,
                        const LossConfig& cfg);

struct CoupledLossGrad {
  double value = 0.0;
  double d_bag_prob = 0.0;
  Vector d_instance_probs;
};
CoupledLossGrad coupled_bag_loss_grad(double bag_prob, std::span<const double> instance_probs,
                                      int label, const LossConfig& cfg);

/// Coupled loss driven by nonnegative instance scores h: q_j = instance_prob(h_j),
/// bag_prob = 1 − Π(1 − q_j). Gradient is w.r.t. the scores.
VectorLoss mil_bag_loss_from_scores(std::span<const double> scores, int label,
                                    const LossConfig& cfg);

// --- adversarial heatmap losses --------------------------------------------

struct AdversarialState {
  double k = 0.0;
  std::uint64_t step = 0;
  double last_l_real = 0.0;
  double last_l_fake = 0.0;

  bool operator==(const AdversarialState&) const = default;
};

struct DiscriminatorLosses {
  double l_real = 0.0;
  double l_fake = 0.0;
  double l_d = 0.0;
};

/// Sum of squared per-pixel errors. Throws ShapeError on a shape mismatch.
double sum_squared_error(const Heatmap& a, const Heatmap& b);

/// l_real = Σ |S − D(S)|², l_fake = Σ |Ŝ − D(Ŝ)|² over the batch,
/// l_D = l_real − k·l_fake.
DiscriminatorLosses discriminator_losses(std::span<const Heatmap> real,
                                         std::span<const Heatmap> real_recon,
                                         std::span<const Heatmap> fake,
                                         std::span<const Heatmap> fake_recon,
                                         const AdversarialState& state);

/// k ← clamp(k + ω_k(γ·l_real − l_fake), 0, 1). Also records the losses and
/// advances the step counter.
AdversarialState update_k(const AdversarialState& state, double l_real, double l_fake,
                          const LossConfig& cfg);

/// |fake − gt|² + |fake − D(fake)|², the second term being the adversarial part.
double generator_loss(const Heatmap& fake, const Heatmap& gt, const Heatmap& fake_recon);

}  // namespace amil

#endif  // AMIL_LOSSES_HPP_
