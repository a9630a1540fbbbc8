#ifndef AMIL_TESTS_ORACLES_HPP_
#define AMIL_TESTS_ORACLES_HPP_

// Direct evaluations written without any library helpers, used as reference
// values by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Rows = std::vector<Vec>;

inline Rows matmul(const Rows& a, const Rows& b) {
  Rows out(a.size(), Vec(b.empty() ? 0 : b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < out[i].size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
      out[i][j] = s;
    }
  return out;
}

inline Vec squash(const Vec& v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  Vec out(v.size(), 0.0);
  if (n2 == 0.0) return out;
  const double n = std::sqrt(n2);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = n2 / (1.0 + n2) * v[i] / n;
  return out;
}

struct PoolTrace {
  std::vector<Vec> b;  // logits at the start of each iteration
  std::vector<Vec> w;
  std::vector<Vec> s;
};

// Step-by-step adjust pooling: w = softmax(b), σ = Σ w_i f_i, s = squash(σ), b_i += f_i·s.
inline PoolTrace adjust_pool(const Rows& f, int iterations) {
  PoolTrace t;
  const std::size_t k = f.size();
  const std::size_t d = f[0].size();
  Vec b(k, 0.0);
  for (int it = 0; it < iterations; ++it) {
    t.b.push_back(b);
    double mx = b[0];
    for (double x : b) mx = std::max(mx, x);
    Vec w(k);
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) z += (w[i] = std::exp(b[i] - mx));
    for (double& x : w) x /= z;
    Vec sigma(d, 0.0);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < d; ++j) sigma[j] += w[i] * f[i][j];
    const Vec s = squash(sigma);
    for (std::size_t i = 0; i < k; ++i) {
      double dotp = 0.0;
      for (std::size_t j = 0; j < d; ++j) dotp += f[i][j] * s[j];
      b[i] += dotp;
    }
    t.w.push_back(w);
    t.s.push_back(s);
  }
  return t;
}

inline double margin_loss(double norm, int y, double m_plus, double m_minus) {
  const double pos = std::max(0.0, m_plus - norm);
  const double neg = std::max(0.0, norm - m_minus);
  return y * pos * pos + (1 - y) * neg * neg;
}

inline double instance_prob(double h, double lambda) { return 1.0 - std::exp(-lambda * h); }

inline double negative_bag(const Vec& p) {
  double prod = 1.0;
  for (double x : p) prod *= (1.0 - x);
  return prod;
}

inline double clamp_p(double p) { return std::min(std::max(p, 1e-7), 1.0 - 1e-7); }

// Binary cross-entropy of probability p against label u.
inline double bce(double p, int u) {
  const double c = clamp_p(p);
  return -(u * std::log(c) + (1 - u) * std::log(1.0 - c));
}

inline double coupled_loss(double bag_prob, const Vec& q, int y, double lambda) {
  double inst = 0.0;
  for (double x : q) inst += bce(x, y == 1 && x >= 0.5 ? 1 : 0);
  inst /= static_cast<double>(q.size());
  if (y == 0) return inst;
  const double bag = bce(bag_prob, 1);
  return bag + lambda * (bag - inst) * (bag - inst);
}

struct Pt {
  double x;
  double y;
  bool visible;
};

// Per-joint correct/visible counts over all samples; samples whose normalizer
// is unusable are skipped.
struct PckCounts {
  std::vector<std::size_t> correct;
  std::vector<std::size_t> visible;
  std::size_t skipped = 0;
};

inline PckCounts pck_counts(const std::vector<std::vector<Pt>>& pred,
                            const std::vector<std::vector<Pt>>& gt, double r, std::size_t a,
                            std::size_t b) {
  const std::size_t j = gt.empty() ? 0 : gt[0].size();
  PckCounts c{std::vector<std::size_t>(j, 0), std::vector<std::size_t>(j, 0), 0};
  for (std::size_t s = 0; s < gt.size(); ++s) {
    const double seg = std::sqrt((gt[s][a].x - gt[s][b].x) * (gt[s][a].x - gt[s][b].x) +
                                 (gt[s][a].y - gt[s][b].y) * (gt[s][a].y - gt[s][b].y));
    if (!gt[s][a].visible || !gt[s][b].visible || seg == 0.0) {
      ++c.skipped;
      continue;
    }
    for (std::size_t i = 0; i < j; ++i) {
      if (!gt[s][i].visible) continue;
      ++c.visible[i];
      const double dx = pred[s][i].x - gt[s][i].x;
      const double dy = pred[s][i].y - gt[s][i].y;
      if (std::sqrt(dx * dx + dy * dy) / seg <= r) ++c.correct[i];
    }
  }
  return c;
}

}  // namespace oracle

#endif  // AMIL_TESTS_ORACLES_HPP_
