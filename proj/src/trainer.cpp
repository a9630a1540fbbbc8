#include "amil/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>

#include "amil/errors.hpp"

namespace amil {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be nonnegative");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
  if (decay_every < 1) throw ConfigError("decay_every must be at least 1");
  if (!(decay_base > 0.0)) throw ConfigError("decay_base must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (hidden < 1 || levels < 1 || pool_iterations < 1) {
    throw ConfigError("hidden, levels and pool_iterations must be positive");
  }
  loss.validate();
}

double lr_schedule(double base_lr, std::size_t iteration, const TrainConfig& cfg) {
  const auto steps = static_cast<double>(iteration / cfg.decay_every);
  return base_lr * std::pow(cfg.decay_base, steps);
}

void adam_update(std::span<double> params, std::span<const double> grads, AdamMoments& moments,
                 double lr, double weight_decay) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam update with " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  if (moments.m.empty() && moments.v.empty()) {
    moments.m.assign(params.size(), 0.0);
    moments.v.assign(params.size(), 0.0);
  }
  if (moments.m.size() != params.size() || moments.v.size() != params.size()) {
    throw ShapeError("adam moments sized for " + std::to_string(moments.m.size()) +
                     " parameters, given " + std::to_string(params.size()));
  }
  ++moments.step;
  const auto t = static_cast<double>(moments.step);
  const double correct1 = 1.0 - std::pow(kAdamBeta1, t);
  const double correct2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    moments.m[i] = kAdamBeta1 * moments.m[i] + (1.0 - kAdamBeta1) * g;
    moments.v[i] = kAdamBeta2 * moments.v[i] + (1.0 - kAdamBeta2) * g * g;
    const double m_hat = moments.m[i] / correct1;
    const double v_hat = moments.v[i] / correct2;
    params[i] -= lr * (m_hat / (std::sqrt(v_hat) + kAdamEpsilon) + weight_decay * params[i]);
  }
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void apply_adam(MilNetwork& net, const Parameters& grads, AdamMoments& moments, double lr,
                double weight_decay) {
  Vector flat = net.params.flatten();
  const Vector g = grads.flatten();
  adam_update(flat, g, moments, lr, weight_decay);
  net.params.assign(flat);
}

Vector difference(std::span<const double> a, std::span<const double> b) {
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

double squared_norm(std::span<const double> v) { return dot(v, v); }

Vector scaled(std::span<const double> v, double s) {
  Vector out(v.begin(), v.end());
  for (double& x : out) x *= s;
  return out;
}

void check_finite(const Parameters& p, const char* which) {
  if (!all_finite(p.flatten())) {
    throw NumericError(std::string(which) + " parameters became non-finite", 0);
  }
}

}  // namespace

NetworkDims generator_dims(const TrainConfig& cfg, const PoseConfig& pose) {
  const std::size_t g = pose.grid();
  NetworkDims d;
  d.input = pose.patch_size * pose.patch_size + 2;
  d.hidden = cfg.hidden;
  d.output = pose.joint_count * g * g;
  d.levels = cfg.levels;
  d.pool_iterations = cfg.pool_iterations;
  d.pooling = cfg.pooling;
  return d;
}

NetworkDims discriminator_dims(const TrainConfig& cfg, const PoseConfig& pose) {
  NetworkDims d = generator_dims(cfg, pose);
  d.input += pose.joint_count;
  return d;
}

TrainingState init_training(const TrainConfig& cfg, const PoseConfig& pose) {
  cfg.validate();
  pose.validate();
  TrainingState state;
  state.seed = cfg.seed;
  state.generator = init_params(generator_dims(cfg, pose), splitmix64(cfg.seed ^ 0x67656eULL));
  state.discriminator =
      init_params(discriminator_dims(cfg, pose), splitmix64(cfg.seed ^ 0x646973ULL));
  return state;
}

Heatmap predict_heatmap(const MilNetwork& generator, const Matrix& image, const PoseConfig& pose) {
  const std::size_t g = pose.grid();
  return Heatmap(pose.joint_count, g, g,
                 infer_score(generator, image_to_bag(image, pose.patch_size).instances));
}

namespace {

StepGradients evaluate_step(const TrainingState& state, std::span<const PoseSample> batch,
                            const TrainConfig& cfg, const PoseConfig& pose, bool with_grads) {
  if (batch.empty()) throw DomainError("training step on an empty batch");
  const std::size_t levels = state.generator.dims.levels;
  const double inv_levels = 1.0 / static_cast<double>(levels);
  const std::size_t g = pose.grid();
  const std::size_t joints = pose.joint_count;
  const std::size_t hm_offset = pose.patch_size * pose.patch_size + 2;
  const double k = state.balance.k;

  StepGradients out;
  if (with_grads) {
    out.generator = state.generator.params.zeros_like();
    out.discriminator = state.discriminator.params.zeros_like();
  }
  StepMetrics& metrics = out.metrics;
  metrics.iteration = state.iteration;

  // Samples are processed in batch order so the gradient sums are deterministic.
  for (const PoseSample& sample : batch) {
    const Matrix instances = image_to_bag(sample.image, pose.patch_size).instances;
    const ForwardTrace gen_trace = forward_trace(state.generator, instances);
    const Vector fake = mean_of_levels(gen_trace.outputs);
    const Vector& gt = sample.heatmaps.values;
    if (gt.size() != fake.size()) {
      throw ShapeError("ground-truth heatmap " + sample.heatmaps.shape_string() +
                       " does not match the generator output size " + std::to_string(fake.size()));
    }

    LevelGrads gen_up;
    gen_up.scores.resize(levels);
    for (std::size_t l = 0; l < levels; ++l) {
      const Vector diff = difference(gen_trace.outputs.scores[l], gt);
      metrics.gen_loss += squared_norm(diff);
      gen_up.scores[l] = scaled(diff, 2.0);
    }

    if (cfg.adversarial) {
      const Heatmap fake_hm(joints, g, g, fake);
      const ForwardTrace real_trace = forward_trace(
          state.discriminator, image_heatmap_instances(sample.image, sample.heatmaps, pose.patch_size));
      const ForwardTrace fake_trace = forward_trace(
          state.discriminator, image_heatmap_instances(sample.image, fake_hm, pose.patch_size));
      const Vector real_err = difference(mean_of_levels(real_trace.outputs), gt);
      const Vector fake_err = difference(mean_of_levels(fake_trace.outputs), fake);
      const double l_real = squared_norm(real_err);
      const double l_fake = squared_norm(fake_err);
      metrics.l_real += l_real;
      metrics.l_fake += l_fake;
      metrics.gen_loss += l_fake;

      if (with_grads) {
        // One backward pass through D on the fake input serves both networks:
        // its parameter part (scaled by −k) goes to D, its input part to G.
        LevelGrads fake_up;
        fake_up.scores.assign(levels, scaled(fake_err, 2.0 * inv_levels));
        const BackwardResult fake_back = backward(state.discriminator, fake_trace, fake_up);

        LevelGrads real_up;
        real_up.scores.assign(levels, scaled(real_err, 2.0 * inv_levels));
        out.discriminator.add(backward(state.discriminator, real_trace, real_up).params);
        out.discriminator.add(fake_back.params, -k);

        // d|Ŝ − D(Ŝ)|²/dŜ = −2(D(Ŝ) − Ŝ) + J_Dᵀ · 2(D(Ŝ) − Ŝ)
        Vector d_fake = scaled(fake_err, -2.0);
        for (std::size_t cell = 0; cell < g * g; ++cell) {
          const auto row = fake_back.input.row(cell);
          for (std::size_t j = 0; j < joints; ++j) {
            d_fake[j * g * g + cell] += row[hm_offset + j];
          }
        }
        for (std::size_t l = 0; l < levels; ++l) axpy(inv_levels, d_fake, gen_up.scores[l]);
      }
    }
    if (with_grads) out.generator.add(backward(state.generator, gen_trace, gen_up).params);
  }

  metrics.l_d = metrics.l_real - k * metrics.l_fake;
  if (with_grads) {
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    Parameters gen = out.generator.zeros_like();
    gen.add(out.generator, inv_batch);
    out.generator = std::move(gen);
    Parameters disc = out.discriminator.zeros_like();
    disc.add(out.discriminator, inv_batch);
    out.discriminator = std::move(disc);
  }
  return out;
}

}  // namespace

StepGradients step_gradients(const TrainingState& state, std::span<const PoseSample> batch,
                             const TrainConfig& cfg, const PoseConfig& pose) {
  return evaluate_step(state, batch, cfg, pose, true);
}

StepMetrics step_losses(const TrainingState& state, std::span<const PoseSample> batch,
                        const TrainConfig& cfg, const PoseConfig& pose) {
  return evaluate_step(state, batch, cfg, pose, false).metrics;
}

StepMetrics train_step(TrainingState& state, std::span<const PoseSample> batch,
                       const TrainConfig& cfg, const PoseConfig& pose) {
  StepGradients grads = step_gradients(state, batch, cfg, pose);
  StepMetrics& metrics = grads.metrics;
  for (double v : {metrics.l_real, metrics.l_fake, metrics.gen_loss}) {
    if (!std::isfinite(v) || v > cfg.divergence_limit) {
      throw DivergenceError(state.iteration, metrics.l_real, metrics.l_fake, metrics.gen_loss);
    }
  }

  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  const double lr = lr_schedule(cfg.learning_rate, state.iteration, cfg);
  metrics.lr = lr;

  if (cfg.adversarial && !cfg.freeze_discriminator) {
    apply_adam(state.discriminator, grads.discriminator, state.discriminator_moments, lr,
               cfg.weight_decay);
    check_finite(state.discriminator.params, "discriminator");
  }
  apply_adam(state.generator, grads.generator, state.generator_moments, lr, cfg.weight_decay);
  check_finite(state.generator.params, "generator");

  if (cfg.adversarial && !cfg.freeze_k) {
    state.balance = update_k(state.balance, metrics.l_real * inv_batch,
                             metrics.l_fake * inv_batch, cfg.loss);
  } else {
    state.balance.step += 1;
    state.balance.last_l_real = metrics.l_real * inv_batch;
    state.balance.last_l_fake = metrics.l_fake * inv_batch;
  }
  metrics.k = state.balance.k;
  ++state.iteration;
  return metrics;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t iteration,
                                       std::size_t dataset_size, std::size_t batch_size) {
  if (dataset_size == 0) throw DomainError("cannot draw a batch from an empty dataset");
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(iteration)));
  const std::size_t take = std::min(batch_size, dataset_size);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, dataset_size - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(take);
  return order;
}

void train(TrainingState& state, std::span<const PoseSample> dataset, const TrainConfig& cfg,
           const PoseConfig& pose, const StepCallback& on_step) {
  std::vector<PoseSample> batch;
  while (state.iteration < cfg.total_iterations) {
    batch.clear();
    for (std::size_t idx : batch_indices(state.seed, state.iteration, dataset.size(), cfg.batch_size)) {
      batch.push_back(dataset[idx]);
    }
    const StepMetrics m = train_step(state, batch, cfg, pose);
    if (on_step) on_step(m, state);
  }
}

std::string metrics_csv_header() { return "iter,l_real,l_fake,l_D,gen_loss,k,lr\n"; }

std::string metrics_csv_row(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", m.iteration,
                m.l_real, m.l_fake, m.l_d, m.gen_loss, m.k, m.lr);
  return buf;
}

// ---------------------------------------------------------------------------
// Checkpoint encoding

namespace {

constexpr char kMagic[4] = {'A', 'M', 'I', 'L'};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void raw(std::string_view s) { bytes_.append(s); }

  void tensor(const std::string& name, std::span<const double> values,
              const std::vector<std::size_t>& dims) {
    if (name.size() > 0xFFFF) throw ShapeError("tensor name too long");
    u16(static_cast<std::uint16_t>(name.size()));
    raw(name);
    u8(static_cast<std::uint8_t>(dims.size()));
    for (std::size_t d : dims) u64(d);
    for (double v : values) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      checksum_ += bits;
      u64(bits);
    }
  }

  std::string finish() {
    u64(checksum_);
    return std::move(bytes_);
  }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string bytes_;
  std::uint64_t checksum_ = 0;
};

struct Tensor {
  std::vector<std::size_t> dims;
  Vector values;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw ParseError("truncated checkpoint", pos_);
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

Vector dims_record(const NetworkDims& d) {
  return {static_cast<double>(d.input), static_cast<double>(d.hidden),
          static_cast<double>(d.output), static_cast<double>(d.levels),
          static_cast<double>(d.pool_iterations), static_cast<double>(static_cast<int>(d.pooling))};
}

void write_network(Writer& w, const std::string& prefix, const MilNetwork& net,
                   const AdamMoments& moments) {
  w.tensor(prefix + ".dims", dims_record(net.dims), {6});
  net.params.for_each_tensor(
      [&](const std::string& name, std::span<const double> v, std::vector<std::size_t> shape) {
        w.tensor(prefix + "." + name, v, shape);
      });
  w.tensor(prefix + ".adam.m", moments.m, {moments.m.size()});
  w.tensor(prefix + ".adam.v", moments.v, {moments.v.size()});
  const Vector step{static_cast<double>(moments.step)};
  w.tensor(prefix + ".adam.step", step, {1});
}

const Tensor& require_tensor(const std::map<std::string, Tensor>& tensors,
                             const std::string& name, std::size_t expected, std::size_t offset) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ParseError("checkpoint lacks tensor '" + name + "'", offset);
  if (expected != 0 && it->second.values.size() != expected) {
    throw ParseError("tensor '" + name + "' has " + std::to_string(it->second.values.size()) +
                         " values, expected " + std::to_string(expected),
                     offset);
  }
  return it->second;
}

std::size_t as_count(double v) { return static_cast<std::size_t>(v); }

void read_network(const std::map<std::string, Tensor>& tensors, const std::string& prefix,
                  MilNetwork& net, AdamMoments& moments, std::size_t end) {
  const Vector& d = require_tensor(tensors, prefix + ".dims", 6, end).values;
  NetworkDims dims;
  dims.input = as_count(d[0]);
  dims.hidden = as_count(d[1]);
  dims.output = as_count(d[2]);
  dims.levels = as_count(d[3]);
  dims.pool_iterations = static_cast<int>(d[4]);
  const int pooling = static_cast<int>(d[5]);
  if (pooling < 0 || pooling > 2) throw ParseError("unknown pooling mode in checkpoint", end);
  dims.pooling = static_cast<PoolingMode>(pooling);
  try {
    net = init_params(dims, 0);
  } catch (const DomainError& e) {
    throw ParseError(std::string("invalid network dimensions: ") + e.what(), end);
  }
  net.params.for_each_tensor(
      [&](const std::string& name, std::span<double> v, std::vector<std::size_t>) {
        const Tensor& t = require_tensor(tensors, prefix + "." + name, v.size(), end);
        std::copy(t.values.begin(), t.values.end(), v.begin());
      });
  moments.m = require_tensor(tensors, prefix + ".adam.m", 0, end).values;
  moments.v = require_tensor(tensors, prefix + ".adam.v", 0, end).values;
  moments.step = static_cast<std::uint64_t>(require_tensor(tensors, prefix + ".adam.step", 1, end).values[0]);
}

}  // namespace

std::string encode_checkpoint(const TrainingState& state) {
  Writer w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  write_network(w, "generator", state.generator, state.generator_moments);
  write_network(w, "discriminator", state.discriminator, state.discriminator_moments);
  const Vector balance{state.balance.k, static_cast<double>(state.balance.step),
                       state.balance.last_l_real, state.balance.last_l_fake};
  w.tensor("balance", balance, {4});
  const Vector iteration{static_cast<double>(state.iteration)};
  w.tensor("iteration", iteration, {1});
  // The batch sampler is a pure function of (seed, iteration); the seed is
  // stored as two exact 32-bit halves.
  const Vector rng{static_cast<double>(state.seed >> 32),
                   static_cast<double>(state.seed & 0xFFFFFFFFULL)};
  w.tensor("rng.seed", rng, {2});
  return w.finish();
}

TrainingState decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kMagic, 4)) {
    throw ParseError("missing AMIL magic bytes", 0);
  }
  r.take(4);
  const auto version = static_cast<std::uint32_t>(r.le(4));
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) +
                       " is incompatible with supported version " +
                       std::to_string(kCheckpointVersion));
  }

  std::map<std::string, Tensor> tensors;
  std::uint64_t checksum = 0;
  while (r.remaining() > 8) {
    const std::size_t start = r.offset();
    const auto name_len = static_cast<std::size_t>(r.le(2));
    std::string name(r.take(name_len));
    const auto rank = static_cast<std::size_t>(r.le(1));
    Tensor t;
    std::size_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
      t.dims.push_back(static_cast<std::size_t>(r.le(8)));
      count *= t.dims.back();
    }
    if (count > r.remaining() / 8) throw ParseError("tensor '" + name + "' overruns the file", start);
    t.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t bits = r.le(8);
      checksum += bits;
      t.values[i] = std::bit_cast<double>(bits);
    }
    if (!tensors.emplace(std::move(name), std::move(t)).second) {
      throw ParseError("duplicate tensor in checkpoint", start);
    }
  }
  const std::size_t checksum_at = r.offset();
  if (r.remaining() != 8) throw ParseError("truncated checkpoint", checksum_at);
  if (r.le(8) != checksum) throw ParseError("checksum mismatch", checksum_at);

  TrainingState state;
  read_network(tensors, "generator", state.generator, state.generator_moments, checksum_at);
  read_network(tensors, "discriminator", state.discriminator, state.discriminator_moments,
               checksum_at);
  const Vector& b = require_tensor(tensors, "balance", 4, checksum_at).values;
  state.balance = {b[0], static_cast<std::uint64_t>(b[1]), b[2], b[3]};
  state.iteration = as_count(require_tensor(tensors, "iteration", 1, checksum_at).values[0]);
  const Vector& seed = require_tensor(tensors, "rng.seed", 2, checksum_at).values;
  state.seed = (static_cast<std::uint64_t>(seed[0]) << 32) | static_cast<std::uint64_t>(seed[1]);
  return state;
}

void save_checkpoint(const std::string& path, const TrainingState& state) {
  const std::string bytes = encode_checkpoint(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

TrainingState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace amil
