#include "amil/pooling.hpp"

#include <cmath>

#include "amil/errors.hpp"

namespace amil {

void InstanceBag::validate() const {
  if (instances.rows() == 0) throw DomainError("bag '" + id + "' has no instances");
}

namespace {

// n / (1 + n²) written so that large n neither overflows nor cancels.
double squash_scale(double n) {
  if (n == 0.0) return 0.0;
  return n > 1.0 ? 1.0 / (n + 1.0 / n) : n / (1.0 + n * n);
}

void require_nonempty(const Matrix& embeddings) {
  if (embeddings.rows() == 0) throw DomainError("pooling an empty bag");
}

}  // namespace

Vector squash(std::span<const double> sigma) {
  const double scale = squash_scale(l2_norm(sigma));
  Vector out(sigma.begin(), sigma.end());
  for (double& x : out) x *= scale;
  return out;
}

Vector squash_backward(std::span<const double> sigma, std::span<const double> upstream) {
  if (sigma.size() != upstream.size()) {
    throw ShapeError("squash gradient of length " + std::to_string(upstream.size()) +
                     " for input of length " + std::to_string(sigma.size()));
  }
  const double n = l2_norm(sigma);
  Vector out(sigma.size(), 0.0);
  if (n == 0.0) return out;  // Jacobian vanishes at the origin
  const double scale = squash_scale(n);
  const double n2 = n * n;
  // d(scale)/dn / n = (1 − n²) / ((1 + n²)² n)
  const double radial = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2) * n);
  const double proj = dot(sigma, upstream);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = scale * upstream[i] + radial * proj * sigma[i];
  }
  return out;
}

Vector weighted_sum(const Matrix& rows, std::span<const double> weights) {
  if (weights.size() != rows.rows()) {
    throw ShapeError(std::to_string(weights.size()) + " weights for " +
                     std::to_string(rows.rows()) + " rows");
  }
  Vector out(rows.cols(), 0.0);
  for (std::size_t i = 0; i < rows.rows(); ++i) axpy(weights[i], rows.row(i), out);
  return out;
}

const Vector& PoolState::weights() const {
  if (history.empty()) throw StateError("pool state has no iteration history");
  return history.back().weights;
}

const Vector& PoolState::embedding() const {
  if (history.empty()) throw StateError("pool state has no iteration history");
  return history.back().embedding;
}

std::pair<Vector, PoolState> adjust_pool(const Matrix& embeddings, int iterations) {
  require_nonempty(embeddings);
  if (iterations < 1) throw DomainError("adjust pooling needs at least one iteration");

  PoolState state;
  state.instances = embeddings;
  state.history.reserve(static_cast<std::size_t>(iterations));

  Vector logits(embeddings.rows(), 0.0);
  for (int t = 0; t < iterations; ++t) {
    PoolIteration it;
    it.logits = logits;
    it.weights = softmax(logits);
    it.sigma = weighted_sum(embeddings, it.weights);
    it.embedding = squash(it.sigma);
    for (std::size_t i = 0; i < embeddings.rows(); ++i) {
      logits[i] += dot(embeddings.row(i), it.embedding);
    }
    state.history.push_back(std::move(it));
  }
  Vector out = state.history.back().embedding;
  return {std::move(out), std::move(state)};
}

Matrix adjust_pool_backward(const PoolState& state, std::span<const double> upstream) {
  if (!state.has_history()) throw StateError("adjust pooling backward without history");
  const Matrix& f = state.instances;
  const std::size_t k = f.rows();
  const std::size_t d = f.cols();
  if (upstream.size() != d) {
    throw ShapeError("upstream gradient of length " + std::to_string(upstream.size()) +
                     " for embedding of length " + std::to_string(d));
  }

  Matrix grad(k, d);
  Vector d_logits(k, 0.0);  // gradient w.r.t. b^{t+1}
  const std::size_t last = state.history.size() - 1;
  for (std::size_t t = state.history.size(); t-- > 0;) {
    const PoolIteration& it = state.history[t];
    Vector d_embed(d, 0.0);
    if (t == last) {
      d_embed.assign(upstream.begin(), upstream.end());
    } else {
      // b^{t+1} = b^t + F s^t
      for (std::size_t i = 0; i < k; ++i) {
        if (d_logits[i] == 0.0) continue;
        axpy(d_logits[i], f.row(i), d_embed);
        axpy(d_logits[i], it.embedding, grad.row(i));
      }
    }
    const Vector d_sigma = squash_backward(it.sigma, d_embed);

    // σ = Σ w_i f_i, w = softmax(b^t)
    Vector d_weights(k);
    double mean_dw = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      axpy(it.weights[i], d_sigma, grad.row(i));
      d_weights[i] = dot(f.row(i), d_sigma);
      mean_dw += it.weights[i] * d_weights[i];
    }
    for (std::size_t i = 0; i < k; ++i) {
      d_logits[i] += it.weights[i] * (d_weights[i] - mean_dw);
    }
  }
  return grad;
}

Vector baseline_pool(const Matrix& embeddings, BaselineMode mode) {
  require_nonempty(embeddings);
  if (mode == BaselineMode::mean) {
    const Vector uniform(embeddings.rows(), 1.0 / static_cast<double>(embeddings.rows()));
    return weighted_sum(embeddings, uniform);
  }
  Vector out(embeddings.row(0).begin(), embeddings.row(0).end());
  for (std::size_t i = 1; i < embeddings.rows(); ++i) {
    const auto r = embeddings.row(i);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = r[j] > out[j] ? r[j] : out[j];
  }
  return out;
}

Matrix baseline_pool_backward(const Matrix& embeddings, BaselineMode mode,
                              std::span<const double> upstream) {
  require_nonempty(embeddings);
  if (upstream.size() != embeddings.cols()) {
    throw ShapeError("upstream gradient of length " + std::to_string(upstream.size()) +
                     " for embedding of length " + std::to_string(embeddings.cols()));
  }
  Matrix grad(embeddings.rows(), embeddings.cols());
  if (mode == BaselineMode::mean) {
    const double w = 1.0 / static_cast<double>(embeddings.rows());
    for (std::size_t i = 0; i < embeddings.rows(); ++i) axpy(w, upstream, grad.row(i));
    return grad;
  }
  for (std::size_t j = 0; j < embeddings.cols(); ++j) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < embeddings.rows(); ++i) {
      if (embeddings(i, j) > embeddings(arg, j)) arg = i;
    }
    grad(arg, j) = upstream[j];
  }
  return grad;
}

}  // namespace amil
