#ifndef AMIL_MILNET_HPP_
#define AMIL_MILNET_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "amil/numkernel.hpp"
#include "amil/pooling.hpp"

namespace amil {

enum class PoolingMode { adjust, mean, max };

PoolingMode parse_pooling_mode(const std::string& name);
std::string to_string(PoolingMode mode);

/// Fully connected map y = x·W + b, with W stored (inputs × outputs).
struct Dense {
  Matrix weight;
  Vector bias;

  std::size_t inputs() const { return weight.rows(); }
  std::size_t outputs() const { return weight.cols(); }
  bool operator==(const Dense&) const = default;
};

struct NetworkDims {
  std::size_t input = 0;
  std::size_t hidden = 128;
  std::size_t output = 1;
  std::size_t levels = 3;
  int pool_iterations = kDefaultPoolIterations;
  PoolingMode pooling = PoolingMode::adjust;

  // Throws DomainError on a zero dimension or fewer than one level/iteration.
  void validate() const;
};

/// Trainable tensors of an MI-RNet. The same type holds gradients.
struct Parameters {
  std::vector<Dense> layers;  // instance transformers, one per level
  std::vector<Dense> heads;   // per-level heads over the accumulated bag embedding

  std::size_t count() const;
  // Flat views in a fixed order: layer weights/biases, then head weights/biases.
  Vector flatten() const;
  void assign(std::span<const double> flat);
  void for_each_tensor(const std::function<void(const std::string&, std::span<double>,
                                                std::vector<std::size_t>)>& fn);
  void for_each_tensor(const std::function<void(const std::string&, std::span<const double>,
                                                std::vector<std::size_t>)>& fn) const;
  Parameters zeros_like() const;
  void add(const Parameters& other, double scale = 1.0);
  bool operator==(const Parameters&) const = default;
};

/// Multi-instance residual network. Level l transforms every instance with
/// H^l (FC + ReLU), pools the level's instances into a bag embedding, and adds
/// it to the running bag embedding of the level below. Each level has its own
/// head that maps its accumulated embedding to a prediction.
struct MilNetwork {
  NetworkDims dims;
  Parameters params;
};

/// Initializes weights from N(0, 1/fan_in) and biases to exactly 0.
MilNetwork init_params(const NetworkDims& dims, std::uint64_t seed);

struct LevelOutputs {
  std::vector<Vector> pooled;       // X_i^l before the residual sum
  std::vector<Vector> accumulated;  // residual running sum up to level l
  std::vector<Vector> scores;       // head_l(accumulated_l)
};

/// Forward record retained for backward().
struct ForwardTrace {
  LevelOutputs outputs;
  std::vector<Matrix> activations;     // [0] is the input bag, [l+1] is level l output
  std::vector<Matrix> preactivations;  // per level, before ReLU
  std::vector<PoolState> pools;        // adjust pooling only

  bool empty() const { return activations.empty(); }
};

ForwardTrace forward_trace(const MilNetwork& net, const Matrix& instances);
LevelOutputs forward(const MilNetwork& net, const InstanceBag& bag);

/// Upstream gradients per level. Either list may be empty (treated as zero).
struct LevelGrads {
  std::vector<Vector> scores;
  std::vector<Vector> pooled;
};

struct BackwardResult {
  Parameters params;
  Matrix input;  // gradient w.r.t. every input instance feature
};

BackwardResult backward(const MilNetwork& net, const ForwardTrace& trace,
                        const LevelGrads& grads);

/// Mean of the per-level predictions (all levels weighted equally).
Vector mean_of_levels(const LevelOutputs& outputs);
Vector infer_score(const MilNetwork& net, const InstanceBag& bag);
Vector infer_score(const MilNetwork& net, const Matrix& instances);

}  // namespace amil

#endif  // AMIL_MILNET_HPP_
