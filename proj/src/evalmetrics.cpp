#include "amil/evalmetrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include <json.hpp>

#include "amil/errors.hpp"

namespace amil {

std::string to_string(Normalizer n) {
  return n == Normalizer::torso ? "torso" : "head_segment";
}

Normalizer parse_normalizer(const std::string& name) {
  if (name == "torso" || name == "pck") return Normalizer::torso;
  if (name == "head_segment" || name == "head" || name == "pckh") return Normalizer::head_segment;
  throw ConfigError("unknown normalizer '" + name + "' (expected torso|head_segment)");
}

namespace {

void require_aligned(std::span<const KeypointSet> pred, std::span<const KeypointSet> gt) {
  if (pred.size() != gt.size()) {
    throw ShapeError(std::to_string(pred.size()) + " predictions for " +
                     std::to_string(gt.size()) + " ground-truth poses");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != gt[i].size()) {
      throw ShapeError("sample " + std::to_string(i) + " has " +
                       std::to_string(pred[i].size()) + " predicted joints for " +
                       std::to_string(gt[i].size()) + " ground-truth joints");
    }
  }
}

double distance(const Keypoint& a, const Keypoint& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

}  // namespace

PckResult pck(std::span<const KeypointSet> pred, std::span<const KeypointSet> gt, double r,
              Normalizer normalizer, const SkeletonLayout& layout) {
  require_aligned(pred, gt);
  if (!(r > 0.0 && r <= 1.0)) throw DomainError("PCK tolerance must lie in (0, 1]");
  const std::size_t joints = layout.names.size();
  const auto [na, nb] = normalizer == Normalizer::torso ? layout.torso : layout.head_segment;

  PckResult out;
  out.joints = layout.names;
  out.r = r;
  out.normalizer = normalizer;
  out.per_joint_rate.assign(joints, 0.0);
  out.per_joint_visible.assign(joints, 0);
  std::vector<std::size_t> correct(joints, 0);

  for (std::size_t s = 0; s < gt.size(); ++s) {
    if (gt[s].size() != joints) {
      throw ShapeError("pose has " + std::to_string(gt[s].size()) + " joints, layout has " +
                       std::to_string(joints));
    }
    const Keypoint& a = gt[s][na];
    const Keypoint& b = gt[s][nb];
    const double segment = distance(a, b);
    if (!a.visible || !b.visible || !(segment > 0.0)) {
      ++out.degenerate_samples;
      continue;
    }
    for (std::size_t j = 0; j < joints; ++j) {
      if (!gt[s][j].visible) continue;
      ++out.per_joint_visible[j];
      if (distance(pred[s][j], gt[s][j]) / segment <= r) ++correct[j];
    }
  }

  std::size_t counted = 0;
  double total = 0.0;
  for (std::size_t j = 0; j < joints; ++j) {
    if (out.per_joint_visible[j] == 0) continue;
    out.per_joint_rate[j] =
        static_cast<double>(correct[j]) / static_cast<double>(out.per_joint_visible[j]);
    total += out.per_joint_rate[j];
    ++counted;
  }
  out.mean_rate = counted == 0 ? 0.0 : total / static_cast<double>(counted);
  return out;
}

std::vector<PckResult> pck_curve(std::span<const KeypointSet> pred,
                                 std::span<const KeypointSet> gt,
                                 std::span<const double> r_values, Normalizer normalizer,
                                 const SkeletonLayout& layout) {
  for (std::size_t i = 1; i < r_values.size(); ++i) {
    if (r_values[i] < r_values[i - 1]) throw DomainError("PCK tolerances must be ascending");
  }
  std::vector<PckResult> out;
  out.reserve(r_values.size());
  for (double r : r_values) out.push_back(pck(pred, gt, r, normalizer, layout));
  return out;
}

Matrix confusion(std::span<const KeypointSet> pred, std::span<const KeypointSet> gt,
                 double assignment_radius) {
  require_aligned(pred, gt);
  if (!(assignment_radius >= 0.0)) throw DomainError("assignment radius must be nonnegative");
  const std::size_t joints = gt.empty() ? 0 : gt.front().size();
  Matrix out(joints, joints + 1);
  for (std::size_t s = 0; s < gt.size(); ++s) {
    if (gt[s].size() != joints) throw ShapeError("poses with differing joint counts");
    for (std::size_t i = 0; i < joints; ++i) {
      std::size_t best = joints;
      double best_dist = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < joints; ++j) {
        if (!gt[s][j].visible) continue;
        const double d = distance(pred[s][i], gt[s][j]);
        if (d <= assignment_radius && d < best_dist) {
          best = j;
          best_dist = d;
        }
      }
      out(i, best) += 1.0;
    }
  }
  return out;
}

std::string pck_to_csv(const PckResult& result) {
  std::string out = "joint,rate\n";
  char buf[64];
  for (std::size_t j = 0; j < result.joints.size(); ++j) {
    std::snprintf(buf, sizeof(buf), "%.17g", result.per_joint_rate[j]);
    out += result.joints[j] + "," + buf + "\n";
  }
  std::snprintf(buf, sizeof(buf), "%.17g", result.mean_rate);
  out += std::string("mean,") + buf + "\n";
  return out;
}

std::string pck_to_json(const PckResult& result) {
  nlohmann::ordered_json j;
  j["r"] = result.r;
  j["normalizer"] = to_string(result.normalizer);
  j["mean_rate"] = result.mean_rate;
  nlohmann::ordered_json per_joint = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < result.joints.size(); ++i) {
    per_joint[result.joints[i]] = result.per_joint_rate[i];
  }
  j["per_joint_rate"] = per_joint;
  j["per_joint_visible"] = result.per_joint_visible;
  j["degenerate_samples"] = result.degenerate_samples;
  return j.dump(2) + "\n";
}

std::string pck_curve_to_csv(const std::vector<PckResult>& curve) {
  std::string out = "r";
  if (!curve.empty()) {
    for (const auto& name : curve.front().joints) out += "," + name;
  }
  out += ",mean\n";
  char buf[64];
  for (const auto& res : curve) {
    std::snprintf(buf, sizeof(buf), "%.17g", res.r);
    out += buf;
    for (double v : res.per_joint_rate) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.17g\n", res.mean_rate);
    out += buf;
  }
  return out;
}

std::string confusion_to_csv(const Matrix& confusion, const std::vector<std::string>& joints) {
  if (confusion.rows() != joints.size() || confusion.cols() != joints.size() + 1) {
    throw ShapeError("confusion matrix " + confusion.shape_string() + " for " +
                     std::to_string(joints.size()) + " joints");
  }
  std::string out = "predicted";
  for (const auto& n : joints) out += "," + n;
  out += ",miss\n";
  char buf[32];
  for (std::size_t i = 0; i < confusion.rows(); ++i) {
    out += joints[i];
    for (std::size_t j = 0; j < confusion.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), ",%.17g", confusion(i, j));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace amil
