#include "amil/losses.hpp"

#include <algorithm>
#include <cmath>

#include "amil/errors.hpp"

namespace amil {

void LossConfig::validate() const {
  if (!(m_minus >= 0.0 && m_minus < m_plus && m_plus <= 1.0)) {
    throw ConfigError("margins must satisfy 0 <= m_minus < m_plus <= 1");
  }
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (!(prob_lambda > 0.0)) throw ConfigError("prob_lambda must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(omega_k > 0.0)) throw ConfigError("omega_k must be positive");
}

namespace {

void require_label(int label) {
  if (label != 0 && label != 1) {
    throw DomainError("bag label must be 0 or 1, got " + std::to_string(label));
  }
}

void require_probability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw DomainError(std::string(what) + " " + std::to_string(p) + " is not in [0, 1]");
  }
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// Derivative of clamp_prob: zero once the clamp is active.
double clamp_slope(double p) {
  return (p >= kProbClamp && p <= 1.0 - kProbClamp) ? 1.0 : 0.0;
}

}  // namespace

double margin_loss(double bag_norm, int label, const LossConfig& cfg) {
  require_label(label);
  if (!(bag_norm >= 0.0 && bag_norm < 1.0)) {
    throw DomainError("bag embedding length " + std::to_string(bag_norm) +
                      " outside [0, 1)");
  }
  if (label == 1) {
    const double gap = std::max(0.0, cfg.m_plus - bag_norm);
    return gap * gap;
  }
  const double gap = std::max(0.0, bag_norm - cfg.m_minus);
  return gap * gap;
}

double margin_loss_grad(double bag_norm, int label, const LossConfig& cfg) {
  margin_loss(bag_norm, label, cfg);  // domain checks
  if (label == 1) return -2.0 * std::max(0.0, cfg.m_plus - bag_norm);
  return 2.0 * std::max(0.0, bag_norm - cfg.m_minus);
}

VectorLoss margin_loss_embedding(std::span<const double> embedding, int label,
                                 const LossConfig& cfg) {
  const double n = l2_norm(embedding);
  VectorLoss out;
  out.value = margin_loss(n, label, cfg);
  out.grad.assign(embedding.size(), 0.0);
  if (n > 0.0) {
    const double scale = margin_loss_grad(n, label, cfg) / n;
    for (std::size_t i = 0; i < embedding.size(); ++i) out.grad[i] = scale * embedding[i];
  }
  return out;
}

double instance_prob(double h, double lambda) {
  if (!(h >= 0.0)) throw DomainError("instance score " + std::to_string(h) + " is negative");
  return -std::expm1(-lambda * h);
}

double bag_prob_negative(std::span<const double> instance_probs) {
  double prod = 1.0;
  for (double p : instance_probs) {
    require_probability(p, "instance probability");
    prod *= 1.0 - p;
  }
  return prod;
}

CoupledLossGrad coupled_bag_loss_grad(double bag_prob, std::span<const double> instance_probs,
                                      int label, const LossConfig& cfg) {
  require_label(label);
  if (instance_probs.empty()) throw DomainError("coupled loss of a bag without instances");
  require_probability(bag_prob, "bag probability");
  for (double q : instance_probs) require_probability(q, "instance probability");

  const auto n = static_cast<double>(instance_probs.size());
  CoupledLossGrad out;
  out.d_instance_probs.assign(instance_probs.size(), 0.0);

  if (label == 0) {
    // Instance-level loss alone, every pseudo-label 0.
    double total = 0.0;
    for (std::size_t j = 0; j < instance_probs.size(); ++j) {
      const double q = clamp_prob(instance_probs[j]);
      total += -std::log1p(-q);
      out.d_instance_probs[j] = clamp_slope(instance_probs[j]) / (n * (1.0 - q));
    }
    out.value = total / n;
    return out;
  }

  const double p = clamp_prob(bag_prob);
  const double loss_bag = -std::log(p);
  double mean_instance = 0.0;
  Vector d_if(instance_probs.size());
  for (std::size_t j = 0; j < instance_probs.size(); ++j) {
    const double q = clamp_prob(instance_probs[j]);
    const bool positive = instance_probs[j] >= 0.5;
    mean_instance += positive ? -std::log(q) : -std::log1p(-q);
    d_if[j] = clamp_slope(instance_probs[j]) * (positive ? -1.0 / q : 1.0 / (1.0 - q));
  }
  mean_instance /= n;
  const double gap = loss_bag - mean_instance;
  out.value = loss_bag + cfg.lambda * gap * gap;
  out.d_bag_prob = (1.0 + 2.0 * cfg.lambda * gap) * clamp_slope(bag_prob) * (-1.0 / p);
  for (std::size_t j = 0; j < d_if.size(); ++j) {
    out.d_instance_probs[j] = -2.0 * cfg.lambda * gap / n * d_if[j];
  }
  return out;
}

double coupled_bag_loss(double bag_prob, std::span<const double> instance_probs, int label,
                        const LossConfig& cfg) {
  return coupled_bag_loss_grad(bag_prob, instance_probs, label, cfg).value;
}

VectorLoss mil_bag_loss_from_scores(std::span<const double> scores, int label,
                                    const LossConfig& cfg) {
  if (scores.empty()) throw DomainError("coupled loss of a bag without instances");
  const std::size_t m = scores.size();
  Vector q(m);
  for (std::size_t j = 0; j < m; ++j) q[j] = instance_prob(scores[j], cfg.prob_lambda);
  const double bag_prob = 1.0 - bag_prob_negative(q);
  const CoupledLossGrad g = coupled_bag_loss_grad(bag_prob, q, label, cfg);

  // Π_{k≠j}(1 − q_k) from prefix and suffix products.
  Vector prefix(m + 1, 1.0);
  Vector suffix(m + 1, 1.0);
  for (std::size_t j = 0; j < m; ++j) prefix[j + 1] = prefix[j] * (1.0 - q[j]);
  for (std::size_t j = m; j-- > 0;) suffix[j] = suffix[j + 1] * (1.0 - q[j]);

  VectorLoss out;
  out.value = g.value;
  out.grad.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double d_q = g.d_instance_probs[j] + g.d_bag_prob * prefix[j] * suffix[j + 1];
    out.grad[j] = d_q * cfg.prob_lambda * (1.0 - q[j]);
  }
  return out;
}

double sum_squared_error(const Heatmap& a, const Heatmap& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("heatmap shapes differ: " + a.shape_string() + " vs " + b.shape_string());
  }
  double total = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    total += d * d;
  }
  return total;
}

DiscriminatorLosses discriminator_losses(std::span<const Heatmap> real,
                                         std::span<const Heatmap> real_recon,
                                         std::span<const Heatmap> fake,
                                         std::span<const Heatmap> fake_recon,
                                         const AdversarialState& state) {
  if (real.size() != real_recon.size() || fake.size() != fake_recon.size()) {
    throw ShapeError("heatmap batches and reconstructions differ in length");
  }
  DiscriminatorLosses out;
  for (std::size_t i = 0; i < real.size(); ++i) out.l_real += sum_squared_error(real[i], real_recon[i]);
  for (std::size_t i = 0; i < fake.size(); ++i) out.l_fake += sum_squared_error(fake[i], fake_recon[i]);
  out.l_d = out.l_real - state.k * out.l_fake;
  return out;
}

AdversarialState update_k(const AdversarialState& state, double l_real, double l_fake,
                          const LossConfig& cfg) {
  AdversarialState next = state;
  next.k = std::clamp(state.k + cfg.omega_k * (cfg.gamma * l_real - l_fake), 0.0, 1.0);
  next.step = state.step + 1;
  next.last_l_real = l_real;
  next.last_l_fake = l_fake;
  return next;
}

double generator_loss(const Heatmap& fake, const Heatmap& gt, const Heatmap& fake_recon) {
  return sum_squared_error(fake, gt) + sum_squared_error(fake, fake_recon);
}

}  // namespace amil
