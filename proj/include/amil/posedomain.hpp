#ifndef AMIL_POSEDOMAIN_HPP_
#define AMIL_POSEDOMAIN_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "amil/heatmap.hpp"
#include "amil/numkernel.hpp"
#include "amil/pooling.hpp"

namespace amil {

struct Keypoint {
  double x = 0.0;  // column, image pixels
  double y = 0.0;  // row, image pixels
  bool visible = true;

  bool operator==(const Keypoint&) const = default;
};

using KeypointSet = std::vector<Keypoint>;

/// Joint naming, left/right pairs and the normalizing segments used by PCK.
struct SkeletonLayout {
  std::vector<std::string> names;
  std::vector<std::pair<std::size_t, std::size_t>> mirror_pairs;
  std::pair<std::size_t, std::size_t> torso;         // PCK normalizer
  std::pair<std::size_t, std::size_t> head_segment;  // PCKh normalizer
};

// J = 7 (head, neck, pelvis, hands, feet) or J = 16 (MPII joint order).
// Throws ConfigError for any other joint count.
SkeletonLayout skeleton_layout(std::size_t joint_count);

struct PoseConfig {
  std::size_t image_size = 64;
  std::size_t joint_count = 7;
  std::size_t patch_size = 8;
  double limb_thickness = 2.0;
  double sigma_h = 1.0;     // heatmap cells
  double scale_min = 0.85;  // figure size relative to a 64-pixel frame
  double scale_max = 1.1;
  double torso_tilt_deg = 20.0;
  double arm_swing_deg = 150.0;
  double leg_swing_deg = 60.0;
  double noise = 0.0;       // uniform background noise amplitude
  bool occlusion = false;

  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
};

struct PoseSample {
  Matrix image;  // S×S, values in [0, 1]
  KeypointSet keypoints;
  Heatmap heatmaps;  // J × (S/P) × (S/P)
};

/// Deterministic synthetic stick figure for `seed`. Pixel values and keypoint
/// coordinates are quantized to 6 significant digits so that the text dataset
/// format reproduces samples exactly.
PoseSample generate_sample(std::uint64_t seed, const PoseConfig& config);

/// Gaussian targets. Channel j peaks at 1 on the cell containing joint j
/// (keypoints are given in pixels, `cell_size` pixels per cell); invisible
/// joints give an all-zero channel.
Heatmap render_heatmap(const KeypointSet& keypoints, std::size_t height, std::size_t width,
                       double sigma_h, double cell_size = 1.0);

/// Splits the image into a row-major grid of P×P patches. Each instance is the
/// flattened patch followed by its normalized (row, col) center.
InstanceBag image_to_bag(const Matrix& image, std::size_t patch_size);

/// Discriminator instances: image_to_bag features plus the J heatmap values of
/// the cell under each patch. The heatmap grid must equal the patch grid.
Matrix image_heatmap_instances(const Matrix& image, const Heatmap& heatmap,
                               std::size_t patch_size);

/// Argmax cell per channel, mapped to the cell center in an `original_size`
/// pixel frame. Ties go to the smallest row-major index.
KeypointSet decode_pose(const Heatmap& heatmap, std::size_t original_size);

Matrix mirror_image(const Matrix& image);
/// Flips columns and swaps paired left/right channels.
Heatmap mirror_heatmap(const Heatmap& heatmap,
                       const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

using HeatmapPredictor = std::function<Heatmap(const Matrix& image)>;

/// Mean of the prediction on the image and the un-mirrored prediction on its
/// horizontal flip. Throws ConfigError on an empty pairing table.
Heatmap flip_averaged_heatmaps(const HeatmapPredictor& predict, const Matrix& image,
                               const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

// Text dataset ("AMIL-DATA v1").
void write_dataset(std::ostream& out, const std::vector<PoseSample>& samples,
                   const PoseConfig& config);
/// Reads a dataset, rebuilding heatmaps with `sigma_h`. Image size, joint
/// count and patch size in `config` are overwritten from the header.
std::vector<PoseSample> read_dataset(std::istream& in, PoseConfig& config);

void save_dataset(const std::string& path, const std::vector<PoseSample>& samples,
                  const PoseConfig& config);
std::vector<PoseSample> load_dataset(const std::string& path, PoseConfig& config);

std::vector<PoseSample> generate_dataset(std::uint64_t seed, std::size_t count,
                                         const PoseConfig& config);

}  // namespace amil

#endif  // AMIL_POSEDOMAIN_HPP_
