#include "amil/milnet.hpp"

#include <cmath>
#include <random>

#include "amil/errors.hpp"

namespace amil {

PoolingMode parse_pooling_mode(const std::string& name) {
  if (name == "adjust") return PoolingMode::adjust;
  if (name == "mean") return PoolingMode::mean;
  if (name == "max") return PoolingMode::max;
  throw ConfigError("unknown pooling mode '" + name + "' (expected adjust|mean|max)");
}

std::string to_string(PoolingMode mode) {
  switch (mode) {
    case PoolingMode::adjust: return "adjust";
    case PoolingMode::mean: return "mean";
    case PoolingMode::max: return "max";
  }
  return "adjust";
}

void NetworkDims::validate() const {
  if (input == 0 || hidden == 0 || output == 0) {
    throw DomainError("network dimensions must be positive (input=" +
                      std::to_string(input) + ", hidden=" + std::to_string(hidden) +
                      ", output=" + std::to_string(output) + ")");
  }
  if (levels == 0) throw DomainError("network needs at least one level");
  if (pool_iterations < 1) throw DomainError("pool_iterations must be at least 1");
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const auto& d : layers) n += d.weight.size() + d.bias.size();
  for (const auto& d : heads) n += d.weight.size() + d.bias.size();
  return n;
}

void Parameters::for_each_tensor(
    const std::function<void(const std::string&, std::span<double>,
                             std::vector<std::size_t>)>& fn) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l);
    fn(p + ".weight", layers[l].weight.values(), {layers[l].weight.rows(), layers[l].weight.cols()});
    fn(p + ".bias", layers[l].bias, {layers[l].bias.size()});
  }
  for (std::size_t l = 0; l < heads.size(); ++l) {
    const std::string p = "head" + std::to_string(l);
    fn(p + ".weight", heads[l].weight.values(), {heads[l].weight.rows(), heads[l].weight.cols()});
    fn(p + ".bias", heads[l].bias, {heads[l].bias.size()});
  }
}

void Parameters::for_each_tensor(
    const std::function<void(const std::string&, std::span<const double>,
                             std::vector<std::size_t>)>& fn) const {
  const_cast<Parameters*>(this)->for_each_tensor(
      [&](const std::string& name, std::span<double> v, std::vector<std::size_t> shape) {
        fn(name, v, std::move(shape));
      });
}

Vector Parameters::flatten() const {
  Vector out;
  out.reserve(count());
  for_each_tensor([&](const std::string&, std::span<const double> v, std::vector<std::size_t>) {
    out.insert(out.end(), v.begin(), v.end());
  });
  return out;
}

void Parameters::assign(std::span<const double> flat) {
  if (flat.size() != count()) {
    throw ShapeError("assigning " + std::to_string(flat.size()) + " values to " +
                     std::to_string(count()) + " parameters");
  }
  std::size_t offset = 0;
  for_each_tensor([&](const std::string&, std::span<double> v, std::vector<std::size_t>) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.begin());
    offset += v.size();
  });
}

Parameters Parameters::zeros_like() const {
  Parameters z;
  for (const auto& d : layers) z.layers.push_back({Matrix(d.inputs(), d.outputs()), Vector(d.bias.size(), 0.0)});
  for (const auto& d : heads) z.heads.push_back({Matrix(d.inputs(), d.outputs()), Vector(d.bias.size(), 0.0)});
  return z;
}

void Parameters::add(const Parameters& other, double scale) {
  if (other.count() != count()) throw ShapeError("adding parameter sets of different sizes");
  auto apply = [scale](std::vector<Dense>& dst, const std::vector<Dense>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      axpy(scale, src[i].weight.values(), dst[i].weight.values());
      axpy(scale, src[i].bias, dst[i].bias);
    }
  };
  apply(layers, other.layers);
  apply(heads, other.heads);
}

MilNetwork init_params(const NetworkDims& dims, std::uint64_t seed) {
  dims.validate();
  MilNetwork net;
  net.dims = dims;
  std::mt19937_64 rng(seed);
  auto make = [&rng](std::size_t in, std::size_t out) {
    Dense d{Matrix(in, out), Vector(out, 0.0)};
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    for (double& w : d.weight.values()) w = normal(rng);
    return d;
  };
  for (std::size_t l = 0; l < dims.levels; ++l) {
    net.params.layers.push_back(make(l == 0 ? dims.input : dims.hidden, dims.hidden));
  }
  for (std::size_t l = 0; l < dims.levels; ++l) {
    net.params.heads.push_back(make(dims.hidden, dims.output));
  }
  return net;
}

namespace {

Vector dense_apply(const Dense& d, std::span<const double> x) {
  Vector out = d.bias;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != 0.0) axpy(x[i], d.weight.row(i), out);
  }
  return out;
}

BaselineMode baseline_of(PoolingMode mode) {
  return mode == PoolingMode::max ? BaselineMode::max : BaselineMode::mean;
}

}  // namespace

ForwardTrace forward_trace(const MilNetwork& net, const Matrix& instances) {
  const auto& dims = net.dims;
  if (instances.rows() == 0) throw DomainError("forward on an empty bag");
  if (instances.cols() != dims.input) {
    throw ShapeError("bag instances have dimension " + std::to_string(instances.cols()) +
                     " but the network expects " + std::to_string(dims.input));
  }
  ForwardTrace trace;
  trace.activations.reserve(dims.levels + 1);
  trace.activations.push_back(instances);
  for (std::size_t l = 0; l < dims.levels; ++l) {
    const Dense& layer = net.params.layers[l];
    Matrix pre = matmul(trace.activations.back(), layer.weight);
    add_row_bias(pre, layer.bias);
    Matrix post = relu(pre);

    Vector pooled;
    if (dims.pooling == PoolingMode::adjust) {
      auto [embedding, state] = adjust_pool(post, dims.pool_iterations);
      pooled = std::move(embedding);
      trace.pools.push_back(std::move(state));
    } else {
      pooled = baseline_pool(post, baseline_of(dims.pooling));
    }

    Vector acc = pooled;
    if (l > 0) axpy(1.0, trace.outputs.accumulated.back(), acc);
    trace.outputs.scores.push_back(dense_apply(net.params.heads[l], acc));
    trace.outputs.pooled.push_back(std::move(pooled));
    trace.outputs.accumulated.push_back(std::move(acc));
    trace.preactivations.push_back(std::move(pre));
    trace.activations.push_back(std::move(post));
  }
  return trace;
}

LevelOutputs forward(const MilNetwork& net, const InstanceBag& bag) {
  bag.validate();
  return forward_trace(net, bag.instances).outputs;
}

BackwardResult backward(const MilNetwork& net, const ForwardTrace& trace,
                        const LevelGrads& grads) {
  if (trace.empty()) throw StateError("backward called without a retained forward trace");
  const auto& dims = net.dims;
  const std::size_t levels = dims.levels;
  if (trace.outputs.scores.size() != levels) {
    throw StateError("forward trace does not match the network's level count");
  }
  auto check_list = [levels](const std::vector<Vector>& g, const char* what) {
    if (!g.empty() && g.size() != levels) {
      throw ShapeError(std::string(what) + " gradients given for " +
                       std::to_string(g.size()) + " levels, network has " +
                       std::to_string(levels));
    }
  };
  check_list(grads.scores, "score");
  check_list(grads.pooled, "pooled");

  BackwardResult result{net.params.zeros_like(), Matrix()};

  // Gradients w.r.t. each level's pooled embedding, walking the residual chain
  // from the top: acc_l = pooled_l + acc_{l-1}.
  std::vector<Vector> d_pooled(levels);
  Vector carry(dims.hidden, 0.0);
  for (std::size_t l = levels; l-- > 0;) {
    const Dense& head = net.params.heads[l];
    Vector d_acc = carry;
    if (!grads.scores.empty()) {
      const Vector& g = grads.scores[l];
      if (g.size() != head.outputs()) {
        throw ShapeError("score gradient of length " + std::to_string(g.size()) +
                         " for head with " + std::to_string(head.outputs()) + " outputs");
      }
      const Vector& acc = trace.outputs.accumulated[l];
      Dense& dh = result.params.heads[l];
      for (std::size_t i = 0; i < acc.size(); ++i) {
        if (acc[i] != 0.0) axpy(acc[i], g, dh.weight.row(i));
        d_acc[i] += dot(head.weight.row(i), g);
      }
      axpy(1.0, g, dh.bias);
    }
    carry = d_acc;
    d_pooled[l] = std::move(d_acc);
    if (!grads.pooled.empty()) {
      if (grads.pooled[l].size() != dims.hidden) {
        throw ShapeError("pooled gradient of length " + std::to_string(grads.pooled[l].size()) +
                         " for hidden size " + std::to_string(dims.hidden));
      }
      axpy(1.0, grads.pooled[l], d_pooled[l]);
    }
  }

  // Through pooling and the instance transformers, top level first.
  Matrix d_act;  // gradient w.r.t. activations[l + 1] flowing from level l + 1
  for (std::size_t l = levels; l-- > 0;) {
    const Matrix& post = trace.activations[l + 1];
    Matrix d_post = dims.pooling == PoolingMode::adjust
                        ? adjust_pool_backward(trace.pools[l], d_pooled[l])
                        : baseline_pool_backward(post, baseline_of(dims.pooling), d_pooled[l]);
    if (!d_act.empty()) axpy(1.0, d_act.values(), d_post.values());

    const Matrix& pre = trace.preactivations[l];
    auto dv = d_post.values();
    const auto pv = pre.values();
    for (std::size_t i = 0; i < dv.size(); ++i) {
      if (!(pv[i] > 0.0)) dv[i] = 0.0;
    }
    Dense& dl = result.params.layers[l];
    dl.weight = matmul_transpose_a(trace.activations[l], d_post);
    dl.bias = column_sums(d_post);
    d_act = matmul_transpose_b(d_post, net.params.layers[l].weight);
  }
  result.input = std::move(d_act);
  return result;
}

Vector mean_of_levels(const LevelOutputs& outputs) {
  if (outputs.scores.empty()) throw StateError("no level outputs to average");
  Vector out(outputs.scores.front().size(), 0.0);
  for (const auto& s : outputs.scores) axpy(1.0, s, out);
  const double inv = 1.0 / static_cast<double>(outputs.scores.size());
  for (double& x : out) x *= inv;
  return out;
}

Vector infer_score(const MilNetwork& net, const InstanceBag& bag) {
  return mean_of_levels(forward(net, bag));
}

Vector infer_score(const MilNetwork& net, const Matrix& instances) {
  return mean_of_levels(forward_trace(net, instances).outputs);
}

}  // namespace amil
