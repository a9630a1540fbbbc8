#ifndef AMIL_TRAINER_HPP_
#define AMIL_TRAINER_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "amil/heatmap.hpp"
#include "amil/losses.hpp"
#include "amil/milnet.hpp"
#include "amil/posedomain.hpp"

namespace amil {

struct TrainConfig {
  double learning_rate = 0.001;
  double weight_decay = 0.01;
  std::size_t total_iterations = 350;
  std::size_t decay_every = 20;
  double decay_base = 0.5;
  std::size_t batch_size = 8;
  std::uint64_t seed = 7;
  LossConfig loss;

  // Network shape shared by generator and discriminator.
  std::size_t hidden = 128;
  std::size_t levels = 3;
  int pool_iterations = kDefaultPoolIterations;
  PoolingMode pooling = PoolingMode::adjust;

  // false: the generator trains on its L2 loss alone and k stays at 0.
  bool adversarial = true;
  bool freeze_discriminator = false;
  bool freeze_k = false;
  double divergence_limit = 1e6;

  void validate() const;
};

/// base_lr · decay_base^floor(iteration / decay_every)
double lr_schedule(double base_lr, std::size_t iteration, const TrainConfig& cfg);

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

struct AdamMoments {
  Vector m;
  Vector v;
  std::uint64_t step = 0;

  bool operator==(const AdamMoments&) const = default;
};

/// Bias-corrected Adam step followed by decoupled weight decay
/// (p ← p − lr·(m̂ / (√v̂ + ε) + weight_decay·p)). Moments are sized on first use.
void adam_update(std::span<double> params, std::span<const double> grads, AdamMoments& moments,
                 double lr, double weight_decay);

/// Everything needed to continue training bit-for-bit.
struct TrainingState {
  MilNetwork generator;
  MilNetwork discriminator;
  AdamMoments generator_moments;
  AdamMoments discriminator_moments;
  AdversarialState balance;
  std::size_t iteration = 0;
  std::uint64_t seed = 0;
};

NetworkDims generator_dims(const TrainConfig& cfg, const PoseConfig& pose);
NetworkDims discriminator_dims(const TrainConfig& cfg, const PoseConfig& pose);
TrainingState init_training(const TrainConfig& cfg, const PoseConfig& pose);

struct StepMetrics {
  std::size_t iteration = 0;
  double l_real = 0.0;
  double l_fake = 0.0;
  double l_d = 0.0;
  double gen_loss = 0.0;
  double k = 0.0;
  double lr = 0.0;
};

/// Batch-mean parameter gradients for both networks, taken at the same
/// parameter snapshot, plus the summed losses. Discriminator gradients are of
/// (l_real − k·l_fake) / B; generator gradients are of gen_loss / B.
struct StepGradients {
  Parameters generator;
  Parameters discriminator;
  StepMetrics metrics;
};
StepGradients step_gradients(const TrainingState& state, std::span<const PoseSample> batch,
                             const TrainConfig& cfg, const PoseConfig& pose);
/// Losses only (no backward pass); lr and k are left at 0.
StepMetrics step_losses(const TrainingState& state, std::span<const PoseSample> batch,
                        const TrainConfig& cfg, const PoseConfig& pose);

/// One adversarial iteration on `batch`. Losses are summed over the batch;
/// gradients and the balance update use batch means. Throws DivergenceError
/// if a loss is non-finite or exceeds cfg.divergence_limit.
StepMetrics train_step(TrainingState& state, std::span<const PoseSample> batch,
                       const TrainConfig& cfg, const PoseConfig& pose);

/// Sample indices for `iteration`; a pure function of (seed, iteration).
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t iteration,
                                       std::size_t dataset_size, std::size_t batch_size);

using StepCallback = std::function<void(const StepMetrics&, const TrainingState&)>;

/// Runs train_step from state.iteration up to cfg.total_iterations.
void train(TrainingState& state, std::span<const PoseSample> dataset, const TrainConfig& cfg,
           const PoseConfig& pose, const StepCallback& on_step = {});

Heatmap predict_heatmap(const MilNetwork& generator, const Matrix& image, const PoseConfig& pose);

std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);

// Binary checkpoint ("AMIL", version 1).
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const TrainingState& state);
/// Throws ParseError (with byte offset) on malformed input, VersionError on a
/// version mismatch. Nothing is returned for a partial file.
TrainingState decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const TrainingState& state);
TrainingState load_checkpoint(const std::string& path);

}  // namespace amil

#endif  // AMIL_TRAINER_HPP_
