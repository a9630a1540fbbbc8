#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "amil/errors.hpp"
#include "amil/losses.hpp"
#include "amil/milnet.hpp"
#include "support/random.hpp"

using namespace amil;

namespace {

NetworkDims small_dims(std::size_t input, std::size_t output, PoolingMode mode = PoolingMode::adjust) {
  NetworkDims d;
  d.input = input;
  d.hidden = 8;
  d.output = output;
  d.levels = 3;
  d.pooling = mode;
  return d;
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy(m.row(perm[i]).begin(), m.row(perm[i]).end(), out.row(i).begin());
  }
  return out;
}

void jitter(MilNetwork& net, std::mt19937_64& rng, double scale) {
  Vector flat = net.params.flatten();
  for (double& v : flat) v += testutil::uniform(rng, -scale, scale);
  net.params.assign(flat);
}

bool clear_of_kinks(const ForwardTrace& t) {
  for (const Matrix& z : t.preactivations)
    for (double v : z.values())
      if (std::abs(v) < 1e-3) return false;
  return true;
}

}  // namespace

TEST_CASE("init_params") {
  const NetworkDims dims = small_dims(5, 3);
  const MilNetwork a = init_params(dims, 99);
  const MilNetwork b = init_params(dims, 99);
  CHECK(a.params == b.params);
  CHECK_FALSE(a.params == init_params(dims, 100).params);
  for (const auto& group : {a.params.layers, a.params.heads}) {
    for (const Dense& d : group) {
      for (double v : d.bias) CHECK(v == 0.0);
    }
  }
  CHECK(a.params.layers.size() == 3);
  CHECK(a.params.layers[0].weight.rows() == 5);
  CHECK(a.params.layers[1].weight.rows() == 8);
  CHECK(a.params.heads[2].weight.cols() == 3);
  CHECK(a.params.count() == (5 * 8 + 8) + 2 * (8 * 8 + 8) + 3 * (8 * 3 + 3));

  NetworkDims zero = dims;
  zero.hidden = 0;
  CHECK_THROWS_AS(init_params(zero, 1), DomainError);
  zero = dims;
  zero.levels = 0;
  CHECK_THROWS_AS(init_params(zero, 1), DomainError);
}

TEST_CASE("init_params weight statistics") {
  NetworkDims dims;
  dims.input = 100;
  dims.hidden = 100;
  dims.output = 1;
  dims.levels = 1;
  const MilNetwork net = init_params(dims, 5);
  const auto w = net.params.layers[0].weight.values();
  REQUIRE(w.size() == 10000);
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / 10000.0;
  double var = 0.0;
  for (double v : w) var += (v - mean) * (v - mean);
  var /= 9999.0;
  const double sd = 1.0 / std::sqrt(100.0);
  CHECK(std::abs(mean) <= 3.0 * sd / 100.0);
  CHECK(std::sqrt(var) == doctest::Approx(sd).epsilon(0.05));
}

TEST_CASE("zero network") {
  MilNetwork net = init_params(small_dims(4, 2), 1);
  net.params.assign(Vector(net.params.count(), 0.0));
  for (auto& h : net.params.heads) h.bias = {0.25, -0.5};
  InstanceBag bag{Matrix::from_rows({{1, 2, 3, 4}, {-1, 0, 2, 1}}), 1, "z"};
  const LevelOutputs out = forward(net, bag);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(out.pooled[l] == Vector(8, 0.0));
    CHECK(out.accumulated[l] == Vector(8, 0.0));
    CHECK(out.scores[l] == Vector{0.25, -0.5});
  }
}

TEST_CASE("single instance with an identity first layer") {
  NetworkDims dims = small_dims(8, 2);
  dims.levels = 1;
  MilNetwork net = init_params(dims, 3);
  net.params.layers[0].weight = Matrix::identity(8);
  const Matrix x = Matrix::from_rows({{0.5, -1.0, 2.0, 0.0, -0.3, 0.1, 1.5, -2.0}});
  const LevelOutputs out = forward(net, InstanceBag{x, 0, "one"});
  CHECK(out.pooled[0] == squash(relu(x.row(0))));
}

TEST_CASE("bag outputs are permutation invariant") {
  std::mt19937_64 rng(21);
  for (PoolingMode mode : {PoolingMode::adjust, PoolingMode::mean, PoolingMode::max}) {
    for (int trial = 0; trial < 30; ++trial) {
      const MilNetwork net = init_params(small_dims(5, 4, mode), rng());
      const Matrix x = testutil::random_matrix(rng, 6, 5);
      std::vector<std::size_t> perm(6);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      const LevelOutputs a = forward(net, InstanceBag{x, 1, "a"});
      const LevelOutputs b = forward(net, InstanceBag{permute_rows(x, perm), 1, "b"});
      for (std::size_t l = 0; l < 3; ++l) {
        for (std::size_t i = 0; i < 8; ++i) {
          CHECK(std::abs(a.pooled[l][i] - b.pooled[l][i]) <= 1e-12);
          CHECK(std::abs(a.accumulated[l][i] - b.accumulated[l][i]) <= 1e-12);
        }
        for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(a.scores[l][i] - b.scores[l][i]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("residual accumulation") {
  std::mt19937_64 rng(22);
  MilNetwork net = init_params(small_dims(5, 2), 7);
  const Matrix x = testutil::random_matrix(rng, 4, 5);
  const LevelOutputs out = forward(net, InstanceBag{x, 0, "r"});
  CHECK(out.accumulated[0] == out.pooled[0]);
  for (std::size_t l = 1; l < 3; ++l) {
    Vector expect = out.pooled[l];
    axpy(1.0, out.accumulated[l - 1], expect);
    CHECK(out.accumulated[l] == expect);
  }

  // Zeroing level 1's transform leaves its accumulated embedding unchanged.
  net.params.layers[1].weight = Matrix(8, 8);
  const LevelOutputs z = forward(net, InstanceBag{x, 0, "r"});
  CHECK(z.pooled[1] == Vector(8, 0.0));
  CHECK(z.accumulated[1] == z.accumulated[0]);
}

TEST_CASE("inference averages the levels") {
  LevelOutputs o;
  o.scores = {{0.2}, {0.4}, {0.6}};
  CHECK(mean_of_levels(o)[0] == doctest::Approx(0.4).epsilon(1e-15));

  std::mt19937_64 rng(23);
  const MilNetwork net = init_params(small_dims(3, 5), 11);
  const InstanceBag bag{testutil::random_matrix(rng, 5, 3), 1, "m"};
  const LevelOutputs out = forward(net, bag);
  const Vector s = infer_score(net, bag);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(std::abs(s[i] - (out.scores[0][i] + out.scores[1][i] + out.scores[2][i]) / 3.0) <= 1e-12);
  }

  NetworkDims one = small_dims(3, 5);
  one.levels = 1;
  const MilNetwork single = init_params(one, 11);
  CHECK(infer_score(single, bag) == forward(single, bag).scores[0]);
}

TEST_CASE("forward is deterministic and checks shapes") {
  std::mt19937_64 rng(24);
  const MilNetwork net = init_params(small_dims(5, 2), 13);
  const InstanceBag bag{testutil::random_matrix(rng, 3, 5), 0, "d"};
  CHECK(forward(net, bag).scores == forward(net, bag).scores);
  CHECK_THROWS_AS(forward(net, InstanceBag{Matrix(3, 4), 0, "bad"}), ShapeError);
  CHECK_THROWS_AS(forward(net, InstanceBag{Matrix(0, 5), 0, "empty"}), DomainError);
}

TEST_CASE("backward edge cases") {
  std::mt19937_64 rng(25);
  const MilNetwork net = init_params(small_dims(4, 3), 17);
  const ForwardTrace trace = forward_trace(net, testutil::random_matrix(rng, 5, 4));
  const BackwardResult zero = backward(net, trace, LevelGrads{});
  CHECK(zero.params == net.params.zeros_like());
  CHECK(zero.input == Matrix(5, 4));
  CHECK_THROWS_AS(backward(net, ForwardTrace{}, LevelGrads{}), StateError);
  LevelGrads bad;
  bad.scores = {Vector(3, 1.0)};
  CHECK_THROWS_AS(backward(net, trace, bad), ShapeError);
}

TEST_CASE("head gradient has the closed-form regression structure") {
  NetworkDims dims = small_dims(3, 2, PoolingMode::mean);
  dims.levels = 1;
  const MilNetwork net = init_params(dims, 29);
  const Matrix x = Matrix::from_rows({{0.7, -0.2, 1.1}});
  const Vector target{0.3, -0.4};
  const ForwardTrace trace = forward_trace(net, x);
  const Vector& pred = trace.outputs.scores[0];
  LevelGrads g;
  g.scores = {{2.0 * (pred[0] - target[0]), 2.0 * (pred[1] - target[1])}};
  const BackwardResult r = backward(net, trace, g);

  // With one instance and mean pooling, the embedding is relu(x·W1 + b1).
  const Matrix pre = matmul(x, net.params.layers[0].weight);
  for (std::size_t i = 0; i < 8; ++i) {
    const double h = std::max(0.0, pre(0, i));
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(r.params.heads[0].weight(i, j) ==
            doctest::Approx(h * 2.0 * (pred[j] - target[j])).epsilon(1e-14));
    }
  }
  CHECK(r.params.heads[0].bias[0] == doctest::Approx(2.0 * (pred[0] - target[0])));
}

TEST_CASE("backward matches finite differences for every pooling mode") {
  const LossConfig loss;
  for (PoolingMode mode : {PoolingMode::adjust, PoolingMode::mean, PoolingMode::max}) {
    std::mt19937_64 rng(26 + static_cast<int>(mode));
    int checked = 0;
    while (checked < 20) {
      MilNetwork net = init_params(small_dims(4, 3, mode), rng());
      jitter(net, rng, 0.1);
      const Matrix x = testutil::random_matrix(rng, 4, 4);
      const ForwardTrace trace = forward_trace(net, x);
      if (!clear_of_kinks(trace)) continue;
      std::vector<Vector> weights;
      for (int l = 0; l < 3; ++l) weights.push_back(testutil::random_vector(rng, 3));
      LevelGrads g;
      g.scores = weights;
      const BackwardResult r = backward(net, trace, g);
      MilNetwork probe = net;
      auto f = [&](std::span<const double> p) {
        probe.params.assign(p);
        const LevelOutputs o = forward_trace(probe, x).outputs;
        double total = 0.0;
        for (int l = 0; l < 3; ++l) total += dot(o.scores[l], weights[l]);
        return total;
      };
      CHECK(finite_diff_check(f, net.params.flatten(), r.params.flatten()).max_relative_error < 1e-4);

      auto fx = [&](std::span<const double> p) {
        const LevelOutputs o = forward_trace(net, Matrix(4, 4, Vector(p.begin(), p.end()))).outputs;
        double total = 0.0;
        for (int l = 0; l < 3; ++l) total += dot(o.scores[l], weights[l]);
        return total;
      };
      CHECK(finite_diff_check(fx, x.values(), r.input.values()).max_relative_error < 1e-4);
      ++checked;
    }
  }
}

TEST_CASE("margin loss through the full network on a 4-instance bag") {
  const LossConfig loss;
  std::mt19937_64 rng(27);
  int checked = 0;
  while (checked < 20) {
    MilNetwork net = init_params(small_dims(6, 2), rng());
    jitter(net, rng, 0.1);
    const Matrix x = testutil::random_matrix(rng, 4, 6);
    const ForwardTrace trace = forward_trace(net, x);
    if (!clear_of_kinks(trace)) continue;
    const int label = checked % 2;
    LevelGrads g;
    for (const Vector& p : trace.outputs.pooled) g.pooled.push_back(margin_loss_embedding(p, label, loss).grad);
    const BackwardResult r = backward(net, trace, g);
    MilNetwork probe = net;
    auto f = [&](std::span<const double> p) {
      probe.params.assign(p);
      double total = 0.0;
      for (const Vector& v : forward_trace(probe, x).outputs.pooled) {
        total += margin_loss_embedding(v, label, loss).value;
      }
      return total;
    };
    CHECK(finite_diff_check(f, net.params.flatten(), r.params.flatten()).max_relative_error < 1e-4);
    ++checked;
  }
}

TEST_CASE("parameter plumbing") {
  MilNetwork net = init_params(small_dims(3, 2), 31);
  const Vector flat = net.params.flatten();
  Parameters copy = net.params.zeros_like();
  copy.assign(flat);
  CHECK(copy == net.params);
  CHECK_THROWS_AS(copy.assign(Vector(3, 0.0)), ShapeError);
  Parameters twice = net.params;
  twice.add(net.params, 1.0);
  const Vector t = twice.flatten();
  for (std::size_t i = 0; i < flat.size(); ++i) CHECK(t[i] == 2.0 * flat[i]);
  std::vector<std::string> names;
  net.params.for_each_tensor([&](const std::string& n, std::span<double>, std::vector<std::size_t>) {
    names.push_back(n);
  });
  CHECK(names.front() == "layer0.weight");
  CHECK(names.back() == "head2.bias");
  CHECK(parse_pooling_mode("max") == PoolingMode::max);
  CHECK(to_string(PoolingMode::adjust) == "adjust");
  CHECK_THROWS_AS(parse_pooling_mode("sum"), ConfigError);
}
