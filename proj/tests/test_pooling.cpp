#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "amil/errors.hpp"
#include "amil/pooling.hpp"
#include "support/oracles.hpp"
#include "support/random.hpp"

using namespace amil;

namespace {

oracle::Rows to_rows(const Matrix& m) {
  oracle::Rows rows(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) rows[i].assign(m.row(i).begin(), m.row(i).end());
  return rows;
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy(m.row(perm[i]).begin(), m.row(perm[i]).end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

TEST_CASE("squash examples") {
  CHECK(squash(Vector{0, 0, 0}) == Vector{0, 0, 0});
  const Vector half = squash(Vector{0.6, 0.8});
  CHECK(half[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(half[1] == doctest::Approx(0.4).epsilon(1e-15));
  const Vector big = squash(Vector{6.0, 8.0});
  CHECK(l2_norm(big) == doctest::Approx(100.0 / 101.0).epsilon(1e-14));
  CHECK(big[0] / big[1] == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("squash norm is bounded and increasing") {
  std::mt19937_64 rng(11);
  double prev_in = 0.0;
  double prev_out = 0.0;
  for (int i = 1; i <= 2000; ++i) {
    const double n = std::pow(10.0, -4.0 + 8.0 * i / 2000.0);
    const double out = l2_norm(squash(Vector{n, 0.0}));
    CHECK(out < 1.0);
    if (prev_in > 0.0 && out < 1.0 - 1e-15) CHECK(out > prev_out);
    prev_in = n;
    prev_out = out;
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const Vector v = testutil::random_vector(rng, testutil::between(rng, 1, 16), -1e3, 1e3);
    CHECK(l2_norm(squash(v)) < 1.0);
  }
}

TEST_CASE("squash backward matches finite differences") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = testutil::between(rng, 1, 16);
    const Vector sigma = testutil::random_vector(rng, d, -2, 2);
    const Vector g = testutil::random_vector(rng, d);
    auto f = [&](std::span<const double> x) { return dot(squash(x), g); };
    CHECK(finite_diff_check(f, sigma, squash_backward(sigma, g)).max_relative_error < 1e-6);
  }
}

TEST_CASE("adjust pooling examples") {
  SUBCASE("single instance") {
    const Matrix f = Matrix::from_rows({{0.3, -1.2, 2.0}});
    for (int t : {1, 3, 7}) {
      const auto [s, state] = adjust_pool(f, t);
      CHECK(state.weights() == Vector{1.0});
      CHECK(s == squash(f.row(0)));
    }
  }
  SUBCASE("identical instances") {
    const Matrix f = Matrix::from_rows({{0.5, 1.5}, {0.5, 1.5}, {0.5, 1.5}, {0.5, 1.5}});
    const auto [s, state] = adjust_pool(f, 3);
    for (double w : state.weights()) CHECK(w == doctest::Approx(0.25).epsilon(1e-15));
    const Vector ref = squash(Vector{0.5, 1.5});
    CHECK(s[0] == doctest::Approx(ref[0]).epsilon(1e-14));
    CHECK(s[1] == doctest::Approx(ref[1]).epsilon(1e-14));
  }
  SUBCASE("two orthogonal instances") {
    const Matrix f = Matrix::from_rows({{1, 0}, {0, 1}});
    const auto [s, state] = adjust_pool(f, 3);
    CHECK(state.weights() == Vector{0.5, 0.5});
    const Vector ref = squash(Vector{0.5, 0.5});
    CHECK(s == ref);
    const auto trace = oracle::adjust_pool(to_rows(f), 3);
    for (int t = 0; t < 3; ++t) {
      CHECK(trace.w[t][0] == 0.5);
      CHECK(trace.w[t][1] == 0.5);
    }
    CHECK(std::abs(l2_norm(s) - 0.5 / 1.5) < 1e-15);
  }
}

TEST_CASE("adjust pooling matches the step-by-step oracle") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix f = testutil::random_matrix(rng, testutil::between(rng, 1, 8),
                                             testutil::between(rng, 1, 16), -2, 2);
    const int t = static_cast<int>(testutil::between(rng, 1, 5));
    const auto [s, state] = adjust_pool(f, t);
    const auto ref = oracle::adjust_pool(to_rows(f), t);
    REQUIRE(state.iterations() == static_cast<std::size_t>(t));
    for (int it = 0; it < t; ++it) {
      for (std::size_t i = 0; i < f.rows(); ++i) {
        CHECK(std::abs(state.history[it].logits[i] - ref.b[it][i]) < 1e-12);
        CHECK(std::abs(state.history[it].weights[i] - ref.w[it][i]) < 1e-12);
      }
      for (std::size_t j = 0; j < f.cols(); ++j) {
        CHECK(std::abs(state.history[it].embedding[j] - ref.s[it][j]) < 1e-12);
      }
    }
  }
}

TEST_CASE("adjust pooling invariants") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = testutil::between(rng, 1, 8);
    const std::size_t d = testutil::between(rng, 1, 16);
    const Matrix f = testutil::random_matrix(rng, k, d, -3, 3);
    const auto [s, state] = adjust_pool(f, 3);

    CHECK(l2_norm(s) < 1.0);
    CHECK(std::all_of(state.history[0].logits.begin(), state.history[0].logits.end(),
                      [](double b) { return b == 0.0; }));
    for (const auto& it : state.history) {
      const double sum = std::accumulate(it.weights.begin(), it.weights.end(), 0.0);
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }

    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto [sp, statep] = adjust_pool(permute_rows(f, perm), 3);
    for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(sp[j] - s[j]) <= 1e-12);
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(std::abs(statep.weights()[i] - state.weights()[perm[i]]) <= 1e-12);
    }

    const auto [s1, state1] = adjust_pool(f, 1);
    CHECK(s1 == squash(baseline_pool(f, BaselineMode::mean)));
  }
}

TEST_CASE("adjust pooling backward") {
  SUBCASE("single instance reduces to the squash Jacobian") {
    const Matrix f = Matrix::from_rows({{0.4, -0.9, 1.3}});
    const Vector g{0.2, 0.7, -1.1};
    const auto [s, state] = adjust_pool(f, 3);
    const Matrix grad = adjust_pool_backward(state, g);
    const Vector ref = squash_backward(f.row(0), g);
    for (std::size_t j = 0; j < 3; ++j) CHECK(grad(0, j) == doctest::Approx(ref[j]).epsilon(1e-12));
  }
  SUBCASE("zero upstream") {
    std::mt19937_64 rng(15);
    const Matrix f = testutil::random_matrix(rng, 5, 4);
    const auto [s, state] = adjust_pool(f, 3);
    CHECK(adjust_pool_backward(state, Vector(4, 0.0)) == Matrix(5, 4));
  }
  SUBCASE("missing history") {
    PoolState empty;
    CHECK_THROWS_AS(adjust_pool_backward(empty, Vector{1.0}), StateError);
    CHECK_THROWS_AS(empty.embedding(), StateError);
  }
  SUBCASE("finite differences on 100 random bags") {
    std::mt19937_64 rng(16);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t k = testutil::between(rng, 1, 8);
      const std::size_t d = testutil::between(rng, 1, 16);
      const Matrix f = testutil::random_matrix(rng, k, d);
      const Vector g = testutil::random_vector(rng, d);
      const auto [s, state] = adjust_pool(f, 3);
      const Matrix grad = adjust_pool_backward(state, g);
      auto fn = [&](std::span<const double> x) {
        return dot(adjust_pool(Matrix(k, d, Vector(x.begin(), x.end())), 3).first, g);
      };
      CHECK(finite_diff_check(fn, f.values(), grad.values()).max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("adjust pooling rejects bad input") {
  CHECK_THROWS_AS(adjust_pool(Matrix(0, 3), 3), DomainError);
  CHECK_THROWS_AS(adjust_pool(Matrix(2, 3), 0), DomainError);
}

TEST_CASE("baseline pooling") {
  const Matrix one = Matrix::from_rows({{2.0, -1.0}});
  CHECK(baseline_pool(one, BaselineMode::mean) == Vector{2.0, -1.0});
  CHECK(baseline_pool(one, BaselineMode::max) == Vector{2.0, -1.0});
  CHECK(baseline_pool(Matrix::from_rows({{1, 0}, {0, 1}}), BaselineMode::mean) == Vector{0.5, 0.5});
  CHECK(baseline_pool(Matrix::from_rows({{1, -1}, {0, 2}}), BaselineMode::max) == Vector{1, 2});
  CHECK_THROWS_AS(baseline_pool(Matrix(0, 2), BaselineMode::mean), DomainError);

  const Matrix tie = Matrix::from_rows({{1, 3}, {1, 2}});
  const Matrix g = baseline_pool_backward(tie, BaselineMode::max, Vector{5, 7});
  CHECK(g == Matrix::from_rows({{5, 7}, {0, 0}}));
  const Matrix gm = baseline_pool_backward(tie, BaselineMode::mean, Vector{2, 4});
  CHECK(gm == Matrix::from_rows({{1, 2}, {1, 2}}));
}
