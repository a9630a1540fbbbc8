#ifndef AMIL_EVALMETRICS_HPP_
#define AMIL_EVALMETRICS_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "amil/numkernel.hpp"
#include "amil/posedomain.hpp"

namespace amil {

enum class Normalizer { torso, head_segment };

std::string to_string(Normalizer n);
Normalizer parse_normalizer(const std::string& name);

struct PckResult {
  std::vector<std::string> joints;
  Vector per_joint_rate;                // 0 where a joint was never visible
  std::vector<std::size_t> per_joint_visible;
  double mean_rate = 0.0;               // over joints with at least one visible instance
  double r = 0.0;
  Normalizer normalizer = Normalizer::torso;
  std::size_t degenerate_samples = 0;   // skipped: normalizer segment unusable
};

/// Fraction of visible ground-truth joints whose prediction lies within
/// r · |normalizer segment| (inclusive), pooled over all samples.
PckResult pck(std::span<const KeypointSet> pred, std::span<const KeypointSet> gt, double r,
              Normalizer normalizer, const SkeletonLayout& layout);

/// One PckResult per tolerance; `r_values` must be ascending.
std::vector<PckResult> pck_curve(std::span<const KeypointSet> pred,
                                 std::span<const KeypointSet> gt,
                                 std::span<const double> r_values, Normalizer normalizer,
                                 const SkeletonLayout& layout);

/// J × (J + 1) counts. Entry (i, j) counts predictions of joint i whose nearest
/// visible ground-truth joint lies within `assignment_radius` pixels and is
/// joint j; the last column collects predictions with no such joint.
Matrix confusion(std::span<const KeypointSet> pred, std::span<const KeypointSet> gt,
                 double assignment_radius);

std::string pck_to_csv(const PckResult& result);
std::string pck_to_json(const PckResult& result);
std::string pck_curve_to_csv(const std::vector<PckResult>& curve);
std::string confusion_to_csv(const Matrix& confusion, const std::vector<std::string>& joints);

}  // namespace amil

#endif  // AMIL_EVALMETRICS_HPP_
