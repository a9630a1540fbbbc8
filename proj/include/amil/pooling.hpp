#ifndef AMIL_POOLING_HPP_
#define AMIL_POOLING_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amil/numkernel.hpp"

namespace amil {

/// A multiple-instance bag: one instance feature vector per row of
/// `instances`. Only the bag carries a label.
struct InstanceBag {
  Matrix instances;
  int label = 0;
  std::string id;

  std::size_t size() const { return instances.rows(); }
  std::size_t dimension() const { return instances.cols(); }
  // Throws DomainError for an empty bag.
  void validate() const;
};

inline constexpr int kDefaultPoolIterations = 3;

/// s = (|σ|² / (1 + |σ|²)) · σ / |σ|, with squash(0) = 0.
Vector squash(std::span<const double> sigma);

/// Vector-Jacobian product of squash at `sigma`. The Jacobian is symmetric, so
/// this is also the Jacobian applied to `upstream`.
Vector squash_backward(std::span<const double> sigma, std::span<const double> upstream);

// Weighted sum Σ w_i · row_i, accumulated in row order.
Vector weighted_sum(const Matrix& rows, std::span<const double> weights);

struct PoolIteration {
  Vector logits;   // b^t
  Vector weights;  // w^t = softmax(b^t)
  Vector sigma;    // Σ w_i f(x_i)
  Vector embedding;  // s^t = squash(sigma)
};

/// Everything adjust_pool_backward needs: the instance embeddings and the
/// record of every refinement iteration.
struct PoolState {
  Matrix instances;
  std::vector<PoolIteration> history;

  bool has_history() const { return !history.empty(); }
  std::size_t iterations() const { return history.size(); }
  // Final weights / embedding; throw StateError without history.
  const Vector& weights() const;
  const Vector& embedding() const;
};

/// Iterative weighted-sum pooling. Starts from uniform weights (b = 0) and for
/// each of `iterations` rounds computes w = softmax(b), σ = Σ w_i f_i,
/// s = squash(σ), then b_i += f_i · s.
std::pair<Vector, PoolState> adjust_pool(const Matrix& embeddings,
                                         int iterations = kDefaultPoolIterations);

/// Gradient of the final pooled embedding with respect to every instance
/// embedding (one row per instance), all iterations unrolled.
Matrix adjust_pool_backward(const PoolState& state, std::span<const double> upstream);

enum class BaselineMode { mean, max };

Vector baseline_pool(const Matrix& embeddings, BaselineMode mode);

// Max routes the gradient to the first instance attaining the maximum.
Matrix baseline_pool_backward(const Matrix& embeddings, BaselineMode mode,
                              std::span<const double> upstream);

}  // namespace amil

#endif  // AMIL_POOLING_HPP_
