#include "amil/gradaudit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "amil/errors.hpp"
#include "amil/losses.hpp"
#include "amil/milnet.hpp"
#include "amil/pooling.hpp"
#include "amil/posedomain.hpp"
#include "amil/trainer.hpp"

namespace amil {

namespace {

// Problems whose evaluation point sits this close to a kink (ReLU, hinge,
// pseudo-label threshold) are redrawn: a central difference across a kink
// measures the wrong one-sided slope.
constexpr double kKinkMargin = 1e-3;
constexpr int kMaxRedraws = 200;

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = uniform(rng, -1.0, 1.0);
  return m;
}

Vector random_vector(Rng& rng, std::size_t n) {
  Vector v(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& x : v) x = normal(rng);
  return v;
}

// Adds N(0, scale²) noise to every parameter so that biases are exercised too.
void jitter(Parameters& params, Rng& rng, double scale) {
  Vector flat = params.flatten();
  std::normal_distribution<double> normal(0.0, scale);
  for (double& v : flat) v += normal(rng);
  params.assign(flat);
}

bool clear_of_kinks(const ForwardTrace& trace) {
  for (const Matrix& z : trace.preactivations) {
    for (double v : z.values()) {
      if (std::abs(v) < kKinkMargin) return false;
    }
  }
  return true;
}

struct Probe {
  bool corrupt = false;
  double step = kGradCheckStep;
};

GradCheckReport check(const ScalarFunction& f, std::span<const double> params, Vector analytic,
                      const Probe& probe) {
  if (probe.corrupt && !analytic.empty()) analytic[0] += 0.01 + 0.01 * std::abs(analytic[0]);
  return finite_diff_check(f, params, analytic, probe.step);
}

// --- components --------------------------------------------------------------

GradCheckReport audit_pooling(Rng& rng, const Probe& probe) {
  const std::size_t k = pick(rng, 1, 8);
  const std::size_t d = pick(rng, 1, 16);
  const Matrix instances = random_matrix(rng, k, d);
  const Vector upstream = random_vector(rng, d);
  const auto [embedding, state] = adjust_pool(instances, 3);
  const Matrix analytic = adjust_pool_backward(state, upstream);
  auto f = [&](std::span<const double> x) {
    const Matrix m(k, d, Vector(x.begin(), x.end()));
    return dot(adjust_pool(m, 3).first, upstream);
  };
  return check(f, instances.values(), analytic.data(), probe);
}

struct MilProblem {
  MilNetwork net;
  Matrix instances;
  int label = 0;
  std::vector<Vector> score_weights;
};

double mil_objective(const MilNetwork& net, const MilProblem& p, const LossConfig& cfg,
                     LevelGrads* grads) {
  const ForwardTrace trace = forward_trace(net, p.instances);
  double total = 0.0;
  if (grads) {
    grads->pooled.clear();
    grads->scores = p.score_weights;
  }
  for (std::size_t l = 0; l < net.dims.levels; ++l) {
    const VectorLoss margin = margin_loss_embedding(trace.outputs.pooled[l], p.label, cfg);
    total += margin.value + dot(trace.outputs.scores[l], p.score_weights[l]);
    if (grads) grads->pooled.push_back(margin.grad);
  }
  return total;
}

bool margins_clear(const ForwardTrace& trace, const LossConfig& cfg) {
  for (const Vector& pooled : trace.outputs.pooled) {
    const double n = l2_norm(pooled);
    if (n < kKinkMargin || std::abs(n - cfg.m_plus) < kKinkMargin ||
        std::abs(n - cfg.m_minus) < kKinkMargin) {
      return false;
    }
  }
  return true;
}

GradCheckReport audit_milnet(Rng& rng, const Probe& probe) {
  const LossConfig cfg;
  MilProblem p;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxRedraws) throw StateError("milnet audit: no kink-free problem found");
    NetworkDims dims;
    dims.input = pick(rng, 2, 8);
    dims.hidden = 8;
    dims.output = 3;
    dims.levels = 3;
    dims.pool_iterations = 3;
    p.net = init_params(dims, rng());
    jitter(p.net.params, rng, 0.1);
    p.instances = random_matrix(rng, pick(rng, 2, 6), dims.input);
    p.label = static_cast<int>(pick(rng, 0, 1));
    p.score_weights.clear();
    for (std::size_t l = 0; l < dims.levels; ++l) p.score_weights.push_back(random_vector(rng, dims.output));
    const ForwardTrace trace = forward_trace(p.net, p.instances);
    if (clear_of_kinks(trace) && margins_clear(trace, cfg)) break;
  }

  LevelGrads grads;
  mil_objective(p.net, p, cfg, &grads);
  const BackwardResult back = backward(p.net, forward_trace(p.net, p.instances), grads);
  MilNetwork shifted = p.net;
  auto f = [&](std::span<const double> x) {
    shifted.params.assign(x);
    return mil_objective(shifted, p, cfg, nullptr);
  };
  return check(f, p.net.params.flatten(), back.params.flatten(), probe);
}

// Margin loss composed with squash, differentiated w.r.t. the pre-squash vector.
GradCheckReport audit_margin(Rng& rng, const Probe& probe) {
  const LossConfig cfg;
  Vector sigma;
  int label = 0;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxRedraws) throw StateError("margin audit: no kink-free problem found");
    sigma = random_vector(rng, pick(rng, 1, 16));
    const double scale = uniform(rng, 0.05, 3.0) / std::max(l2_norm(sigma), 1e-12);
    for (double& v : sigma) v *= scale;
    label = static_cast<int>(pick(rng, 0, 1));
    const double n = l2_norm(squash(sigma));
    const double margin = label == 1 ? cfg.m_plus : cfg.m_minus;
    if (std::abs(n - margin) > kKinkMargin) break;
  }
  const VectorLoss loss = margin_loss_embedding(squash(sigma), label, cfg);
  const Vector analytic = squash_backward(sigma, loss.grad);
  auto f = [&](std::span<const double> x) {
    return margin_loss_embedding(squash(x), label, cfg).value;
  };
  return check(f, sigma, analytic, probe);
}

GradCheckReport audit_coupled(Rng& rng, const Probe& probe) {
  LossConfig cfg;
  Vector scores;
  int label = 0;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxRedraws) throw StateError("coupled audit: no kink-free problem found");
    scores.assign(pick(rng, 1, 8), 0.0);
    for (double& h : scores) h = uniform(rng, 0.02, 1.2);
    label = static_cast<int>(pick(rng, 0, 1));
    cfg.lambda = uniform(rng, 0.5, 2.0);
    const bool clear = std::all_of(scores.begin(), scores.end(), [&](double h) {
      return std::abs(instance_prob(h, cfg.prob_lambda) - 0.5) > kKinkMargin;
    });
    if (clear) break;
  }
  const VectorLoss loss = mil_bag_loss_from_scores(scores, label, cfg);
  auto f = [&](std::span<const double> x) { return mil_bag_loss_from_scores(x, label, cfg).value; };
  return check(f, scores, loss.grad, probe);
}

struct AdversarialProblem {
  TrainingState state;
  std::vector<PoseSample> batch;
  TrainConfig cfg;
  PoseConfig pose;
};

bool adversarial_clear(const AdversarialProblem& p) {
  for (const PoseSample& s : p.batch) {
    const ForwardTrace g = forward_trace(p.state.generator, image_to_bag(s.image, p.pose.patch_size).instances);
    if (!clear_of_kinks(g)) return false;
    const Heatmap fake(p.pose.joint_count, p.pose.grid(), p.pose.grid(), mean_of_levels(g.outputs));
    if (!clear_of_kinks(forward_trace(p.state.discriminator,
                                      image_heatmap_instances(s.image, s.heatmaps, p.pose.patch_size))) ||
        !clear_of_kinks(forward_trace(p.state.discriminator,
                                      image_heatmap_instances(s.image, fake, p.pose.patch_size)))) {
      return false;
    }
  }
  return true;
}

AdversarialProblem adversarial_problem(Rng& rng) {
  AdversarialProblem p;
  p.pose.image_size = 8;
  p.pose.patch_size = 4;
  p.pose.noise = 0.3;
  p.cfg.hidden = 6;
  p.cfg.levels = 3;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxRedraws) throw StateError("adversarial audit: no kink-free problem found");
    p.cfg.seed = rng();
    p.state = init_training(p.cfg, p.pose);
    jitter(p.state.generator.params, rng, 0.05);
    jitter(p.state.discriminator.params, rng, 0.05);
    p.state.balance.k = uniform(rng, 0.0, 1.0);
    p.batch = {generate_sample(rng(), p.pose), generate_sample(rng(), p.pose)};
    if (adversarial_clear(p)) return p;
  }
}

GradCheckReport audit_discriminator(Rng& rng, const Probe& probe) {
  const AdversarialProblem p = adversarial_problem(rng);
  const StepGradients grads = step_gradients(p.state, p.batch, p.cfg, p.pose);
  const double inv_batch = 1.0 / static_cast<double>(p.batch.size());
  TrainingState shifted = p.state;
  auto f = [&](std::span<const double> x) {
    shifted.discriminator.params.assign(x);
    return step_losses(shifted, p.batch, p.cfg, p.pose).l_d * inv_batch;
  };
  return check(f, p.state.discriminator.params.flatten(), grads.discriminator.flatten(), probe);
}

GradCheckReport audit_generator(Rng& rng, const Probe& probe) {
  const AdversarialProblem p = adversarial_problem(rng);
  const StepGradients grads = step_gradients(p.state, p.batch, p.cfg, p.pose);
  const double inv_batch = 1.0 / static_cast<double>(p.batch.size());
  TrainingState shifted = p.state;
  auto f = [&](std::span<const double> x) {
    shifted.generator.params.assign(x);
    return step_losses(shifted, p.batch, p.cfg, p.pose).gen_loss * inv_batch;
  };
  return check(f, p.state.generator.params.flatten(), grads.generator.flatten(), probe);
}

std::uint64_t problem_seed(std::uint64_t base, const std::string& component, std::size_t i) {
  std::uint64_t h = base * 0x9E3779B97F4A7C15ULL + i;
  for (char c : component) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001B3ULL;
  return h;
}

}  // namespace

double default_audit_step(const std::string& component) {
  // The adversarial objectives sum hundreds of squared residuals, so rounding
  // noise in f(θ ± h) swamps their smallest gradient entries at h = 1e-5.
  if (component == "discriminator" || component == "generator") return 1e-4;
  return kGradCheckStep;
}

const std::vector<std::string>& audit_components() {
  static const std::vector<std::string> names = {"pooling", "milnet", "margin",
                                                 "coupled", "discriminator", "generator"};
  return names;
}

GradCheckReport audit_once(const std::string& component, std::uint64_t seed,
                           bool corrupt_analytic, double step) {
  Rng rng(seed);
  const Probe probe{corrupt_analytic, step > 0.0 ? step : default_audit_step(component)};
  if (component == "pooling") return audit_pooling(rng, probe);
  if (component == "milnet") return audit_milnet(rng, probe);
  if (component == "margin") return audit_margin(rng, probe);
  if (component == "coupled") return audit_coupled(rng, probe);
  if (component == "discriminator") return audit_discriminator(rng, probe);
  if (component == "generator") return audit_generator(rng, probe);
  throw ConfigError("unknown gradcheck component '" + component + "'");
}

std::vector<AuditResult> run_gradient_audit(const AuditOptions& options) {
  const auto& known = audit_components();
  std::vector<std::string> selected = options.components.empty() ? known : options.components;
  for (const auto& name : selected) {
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      throw ConfigError("unknown gradcheck component '" + name + "'");
    }
  }
  std::vector<AuditResult> results;
  for (const auto& name : selected) {
    AuditResult r;
    r.component = name;
    for (std::size_t i = 0; i < options.seeds; ++i) {
      const std::uint64_t seed = problem_seed(options.seed, name, i);
      const GradCheckReport rep = audit_once(name, seed, options.corrupt_analytic, options.step);
      ++r.problems;
      r.params_checked += rep.param_count;
      if (i == 0 || rep.max_relative_error > r.max_relative_error) {
        r.max_relative_error = rep.max_relative_error;
        r.worst_seed = seed;
        r.worst_index = rep.worst_index;
      }
    }
    r.passed = r.problems > 0 && r.max_relative_error < options.tolerance;
    results.push_back(r);
  }
  return results;
}

std::string audit_table(const std::vector<AuditResult>& results) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-14s %8s %10s %14s %22s %12s  %s\n", "component", "problems",
                "params", "max_rel_err", "worst_seed", "worst_index", "status");
  out += buf;
  for (const auto& r : results) {
    std::snprintf(buf, sizeof(buf), "%-14s %8zu %10zu %14.3e %22llu %12zu  %s\n",
                  r.component.c_str(), r.problems, r.params_checked, r.max_relative_error,
                  static_cast<unsigned long long>(r.worst_seed), r.worst_index,
                  r.passed ? "PASS" : "FAIL");
    out += buf;
  }
  return out;
}

}  // namespace amil
