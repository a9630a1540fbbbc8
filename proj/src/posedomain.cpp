#include "amil/posedomain.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>

#include "amil/errors.hpp"

namespace amil {

Heatmap::Heatmap(std::size_t c, std::size_t h, std::size_t w, double fill)
    : channels(c), height(h), width(w), values(c * h * w, fill) {}

Heatmap::Heatmap(std::size_t c, std::size_t h, std::size_t w, Vector flat)
    : channels(c), height(h), width(w), values(std::move(flat)) {
  if (values.size() != c * h * w) {
    throw ShapeError("heatmap " + shape_string() + " given " +
                     std::to_string(values.size()) + " values");
  }
}

std::string Heatmap::shape_string() const {
  return "(" + std::to_string(channels) + "x" + std::to_string(height) + "x" +
         std::to_string(width) + ")";
}

SkeletonLayout skeleton_layout(std::size_t joint_count) {
  if (joint_count == 7) {
    return {{"head", "neck", "pelvis", "l_hand", "r_hand", "l_foot", "r_foot"},
            {{3, 4}, {5, 6}},
            {1, 2},
            {0, 1}};
  }
  if (joint_count == 16) {
    return {{"r_ankle", "r_knee", "r_hip", "l_hip", "l_knee", "l_ankle", "pelvis", "thorax",
             "upper_neck", "head_top", "r_wrist", "r_elbow", "r_shoulder", "l_shoulder",
             "l_elbow", "l_wrist"},
            {{0, 5}, {1, 4}, {2, 3}, {10, 15}, {11, 14}, {12, 13}},
            {3, 12},
            {9, 8}};
  }
  throw ConfigError("unsupported joint count " + std::to_string(joint_count) +
                    " (expected 7 or 16)");
}

void PoseConfig::validate() const {
  if (image_size == 0 || patch_size == 0) throw ConfigError("image and patch size must be positive");
  if (image_size % patch_size != 0) {
    throw ConfigError("image size " + std::to_string(image_size) +
                      " is not divisible by patch size " + std::to_string(patch_size));
  }
  if (!(limb_thickness > 0.0)) throw ConfigError("limb thickness must be positive");
  if (!(sigma_h > 0.0)) throw ConfigError("sigma_h must be positive");
  if (!(scale_min > 0.0) || scale_max < scale_min) throw ConfigError("invalid figure scale range");
  if (noise < 0.0 || noise > 1.0) throw ConfigError("noise must lie in [0, 1]");
  skeleton_layout(joint_count);
}

namespace {

enum Mpii : std::size_t {
  kRAnkle, kRKnee, kRHip, kLHip, kLKnee, kLAnkle, kPelvis, kThorax,
  kUpperNeck, kHeadTop, kRWrist, kRElbow, kRShoulder, kLShoulder, kLElbow, kLWrist,
  kMpiiCount
};

// Joints of the 7-joint layout, as indices into the full skeleton.
constexpr std::size_t kCompactJoints[7] = {kHeadTop, kUpperNeck, kPelvis, kLWrist,
                                           kRWrist, kLAnkle, kRAnkle};

constexpr std::pair<std::size_t, std::size_t> kBones[] = {
    {kHeadTop, kUpperNeck}, {kUpperNeck, kThorax}, {kThorax, kPelvis},
    {kThorax, kLShoulder},  {kThorax, kRShoulder}, {kLShoulder, kLElbow},
    {kLElbow, kLWrist},     {kRShoulder, kRElbow}, {kRElbow, kRWrist},
    {kPelvis, kLHip},       {kPelvis, kRHip},      {kLHip, kLKnee},
    {kLKnee, kLAnkle},      {kRHip, kRKnee},       {kRKnee, kRAnkle}};

struct Point {
  double x;
  double y;
};

Point along(Point from, double length, Point dir) {
  return {from.x + length * dir.x, from.y + length * dir.y};
}

double deg(double d) { return d * std::numbers::pi / 180.0; }

double quantize(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 6);
  double out = 0.0;
  std::from_chars(buf, res.ptr, out);
  return out;
}

double segment_distance(double px, double py, Point a, Point b) {
  const double vx = b.x - a.x;
  const double vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (a.x + t * vx);
  const double dy = py - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

void draw_segment(Matrix& image, Point a, Point b, double thickness) {
  const double radius = thickness / 2.0;
  const auto size = static_cast<long>(image.rows());
  const long r0 = std::max(0L, static_cast<long>(std::floor(std::min(a.y, b.y) - radius)));
  const long r1 = std::min(size - 1, static_cast<long>(std::ceil(std::max(a.y, b.y) + radius)));
  const long c0 = std::max(0L, static_cast<long>(std::floor(std::min(a.x, b.x) - radius)));
  const long c1 = std::min(size - 1, static_cast<long>(std::ceil(std::max(a.x, b.x) + radius)));
  for (long r = r0; r <= r1; ++r) {
    for (long c = c0; c <= c1; ++c) {
      if (segment_distance(static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5, a, b) <=
          radius) {
        image(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = 1.0;
      }
    }
  }
}

std::array<Point, kMpiiCount> sample_skeleton(std::mt19937_64& rng, const PoseConfig& cfg) {
  const double s = static_cast<double>(cfg.image_size);
  const double unit = s / 64.0;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };

  const double u = unit * range(cfg.scale_min, cfg.scale_max);
  std::array<Point, kMpiiCount> p{};
  p[kPelvis] = {s / 2.0 + range(-8.0, 8.0) * unit, 0.58 * s + range(-4.0, 4.0) * unit};
  const double tilt = deg(range(-cfg.torso_tilt_deg, cfg.torso_tilt_deg));
  const Point up{std::sin(tilt), -std::cos(tilt)};
  const Point down{-up.x, -up.y};
  const Point side{std::cos(tilt), std::sin(tilt)};  // toward the figure's left
  const Point other{-side.x, -side.y};

  // Direction rotated `angle` from `base` toward `outward`.
  auto swing = [](Point base, Point outward, double angle) {
    return Point{std::cos(angle) * base.x + std::sin(angle) * outward.x,
                 std::cos(angle) * base.y + std::sin(angle) * outward.y};
  };

  p[kThorax] = along(p[kPelvis], 15.0 * u, up);
  p[kUpperNeck] = along(p[kThorax], 3.0 * u, up);
  p[kHeadTop] = along(p[kUpperNeck], 7.0 * u, swing(up, side, deg(range(-15.0, 15.0))));
  p[kLShoulder] = along(p[kThorax], 5.0 * u, side);
  p[kRShoulder] = along(p[kThorax], 5.0 * u, other);
  p[kLHip] = along(p[kPelvis], 4.0 * u, side);
  p[kRHip] = along(p[kPelvis], 4.0 * u, other);

  auto limb = [&](std::size_t root, std::size_t mid, std::size_t tip, Point outward,
                  double upper_len, double lower_len, double swing_max, double bend_lo,
                  double bend_hi) {
    const double a = deg(range(-20.0, swing_max));
    p[mid] = along(p[root], upper_len * u, swing(down, outward, a));
    const double b = a + deg(range(bend_lo, bend_hi));
    p[tip] = along(p[mid], lower_len * u, swing(down, outward, b));
  };
  limb(kLShoulder, kLElbow, kLWrist, side, 9.0, 8.0, cfg.arm_swing_deg, -30.0, 120.0);
  limb(kRShoulder, kRElbow, kRWrist, other, 9.0, 8.0, cfg.arm_swing_deg, -30.0, 120.0);
  limb(kLHip, kLKnee, kLAnkle, side, 11.0, 10.0, cfg.leg_swing_deg, -60.0, 20.0);
  limb(kRHip, kRKnee, kRAnkle, other, 11.0, 10.0, cfg.leg_swing_deg, -60.0, 20.0);
  return p;
}

bool inside(const std::array<Point, kMpiiCount>& p, double size, double margin) {
  return std::all_of(p.begin(), p.end(), [&](Point q) {
    return q.x >= margin && q.y >= margin && q.x < size - margin && q.y < size - margin;
  });
}

std::size_t pixel_index(double coord, std::size_t size) {
  const double f = std::floor(coord);
  if (f < 0.0) return 0;
  return std::min(static_cast<std::size_t>(f), size - 1);
}

}  // namespace

Heatmap render_heatmap(const KeypointSet& keypoints, std::size_t height, std::size_t width,
                       double sigma_h, double cell_size) {
  if (!(sigma_h > 0.0)) throw DomainError("sigma_h must be positive");
  if (!(cell_size > 0.0)) throw DomainError("cell size must be positive");
  Heatmap hm(keypoints.size(), height, width);
  const double denom = 2.0 * sigma_h * sigma_h;
  for (std::size_t j = 0; j < keypoints.size(); ++j) {
    const Keypoint& k = keypoints[j];
    if (!k.visible) continue;
    const auto cx = static_cast<double>(pixel_index(k.x / cell_size, width));
    const auto cy = static_cast<double>(pixel_index(k.y / cell_size, height));
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        const double dx = static_cast<double>(c) - cx;
        const double dy = static_cast<double>(r) - cy;
        hm.at(j, r, c) = std::exp(-(dx * dx + dy * dy) / denom);
      }
    }
  }
  return hm;
}

PoseSample generate_sample(std::uint64_t seed, const PoseConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const auto size = static_cast<double>(config.image_size);

  auto skeleton = sample_skeleton(rng, config);
  for (int attempt = 0; attempt < 64 && !inside(skeleton, size, 1.0); ++attempt) {
    skeleton = sample_skeleton(rng, config);
  }
  // Joints sit on pixel centers, so a pixel-resolution heatmap decodes them exactly.
  for (Point& q : skeleton) {
    q.x = std::floor(std::clamp(q.x, 1.0, size - 1.0 - 1e-3)) + 0.5;
    q.y = std::floor(std::clamp(q.y, 1.0, size - 1.0 - 1e-3)) + 0.5;
  }

  PoseSample sample;
  sample.image = Matrix(config.image_size, config.image_size);
  for (const auto& [a, b] : kBones) {
    draw_segment(sample.image, skeleton[a], skeleton[b], config.limb_thickness);
  }

  if (config.joint_count == 7) {
    for (std::size_t idx : kCompactJoints) {
      sample.keypoints.push_back({skeleton[idx].x, skeleton[idx].y, true});
    }
  } else {
    for (const Point& q : skeleton) sample.keypoints.push_back({q.x, q.y, true});
  }

  if (config.occlusion && uni(rng) < 0.5) {
    const auto layout = skeleton_layout(config.joint_count);
    const auto& pair = layout.mirror_pairs[static_cast<std::size_t>(
        uni(rng) * static_cast<double>(layout.mirror_pairs.size()))];
    const Keypoint& target = sample.keypoints[uni(rng) < 0.5 ? pair.first : pair.second];
    const std::size_t half = std::max<std::size_t>(2, config.image_size / 16);
    const std::size_t cr = pixel_index(target.y, config.image_size);
    const std::size_t cc = pixel_index(target.x, config.image_size);
    for (std::size_t r = cr > half ? cr - half : 0;
         r <= std::min(cr + half, config.image_size - 1); ++r) {
      for (std::size_t c = cc > half ? cc - half : 0;
           c <= std::min(cc + half, config.image_size - 1); ++c) {
        sample.image(r, c) = 0.0;
      }
    }
  }
  if (config.noise > 0.0) {
    for (double& v : sample.image.values()) v = std::max(v, config.noise * uni(rng));
  }
  for (double& v : sample.image.values()) v = quantize(v);

  // A joint is visible only if it still sits on a lit pixel.
  for (Keypoint& k : sample.keypoints) {
    const double under = sample.image(pixel_index(k.y, config.image_size),
                                      pixel_index(k.x, config.image_size));
    if (config.occlusion && under < 1.0) k.visible = false;
  }

  const std::size_t g = config.grid();
  sample.heatmaps = render_heatmap(sample.keypoints, g, g, config.sigma_h,
                                   static_cast<double>(config.patch_size));
  return sample;
}

std::vector<PoseSample> generate_dataset(std::uint64_t seed, std::size_t count,
                                         const PoseConfig& config) {
  std::vector<PoseSample> out;
  out.reserve(count);
  std::mt19937_64 seeds(seed);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_sample(seeds(), config));
  return out;
}

InstanceBag image_to_bag(const Matrix& image, std::size_t patch_size) {
  if (patch_size == 0 || image.rows() == 0 || image.rows() != image.cols()) {
    throw ConfigError("image_to_bag needs a nonempty square image and positive patch size");
  }
  if (image.rows() % patch_size != 0) {
    throw ConfigError("image size " + std::to_string(image.rows()) +
                      " is not divisible by patch size " + std::to_string(patch_size));
  }
  const std::size_t g = image.rows() / patch_size;
  const std::size_t dim = patch_size * patch_size + 2;
  InstanceBag bag;
  bag.instances = Matrix(g * g, dim);
  for (std::size_t pr = 0; pr < g; ++pr) {
    for (std::size_t pc = 0; pc < g; ++pc) {
      auto inst = bag.instances.row(pr * g + pc);
      for (std::size_t r = 0; r < patch_size; ++r) {
        for (std::size_t c = 0; c < patch_size; ++c) {
          inst[r * patch_size + c] = image(pr * patch_size + r, pc * patch_size + c);
        }
      }
      inst[dim - 2] = (static_cast<double>(pr) + 0.5) / static_cast<double>(g);
      inst[dim - 1] = (static_cast<double>(pc) + 0.5) / static_cast<double>(g);
    }
  }
  return bag;
}

Matrix image_heatmap_instances(const Matrix& image, const Heatmap& heatmap,
                               std::size_t patch_size) {
  const InstanceBag base = image_to_bag(image, patch_size);
  const std::size_t g = image.rows() / patch_size;
  if (heatmap.height != g || heatmap.width != g) {
    throw ShapeError("heatmap " + heatmap.shape_string() + " does not match the " +
                     std::to_string(g) + "x" + std::to_string(g) + " patch grid");
  }
  const std::size_t base_dim = base.dimension();
  Matrix out(base.size(), base_dim + heatmap.channels);
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto dst = out.row(i);
    std::copy(base.instances.row(i).begin(), base.instances.row(i).end(), dst.begin());
    for (std::size_t j = 0; j < heatmap.channels; ++j) {
      dst[base_dim + j] = heatmap.at(j, i / g, i % g);
    }
  }
  return out;
}

KeypointSet decode_pose(const Heatmap& heatmap, std::size_t original_size) {
  if (heatmap.cells() == 0) throw DomainError("decoding an empty heatmap");
  KeypointSet out;
  out.reserve(heatmap.channels);
  const double sx = static_cast<double>(original_size) / static_cast<double>(heatmap.width);
  const double sy = static_cast<double>(original_size) / static_cast<double>(heatmap.height);
  for (std::size_t j = 0; j < heatmap.channels; ++j) {
    const auto ch = heatmap.channel(j);
    const auto best = static_cast<std::size_t>(
        std::distance(ch.begin(), std::max_element(ch.begin(), ch.end())));
    const std::size_t r = best / heatmap.width;
    const std::size_t c = best % heatmap.width;
    out.push_back({(static_cast<double>(c) + 0.5) * sx, (static_cast<double>(r) + 0.5) * sy, true});
  }
  return out;
}

Matrix mirror_image(const Matrix& image) {
  Matrix out(image.rows(), image.cols());
  for (std::size_t r = 0; r < image.rows(); ++r)
    for (std::size_t c = 0; c < image.cols(); ++c) out(r, image.cols() - 1 - c) = image(r, c);
  return out;
}

Heatmap mirror_heatmap(const Heatmap& heatmap,
                       const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  std::vector<std::size_t> source(heatmap.channels);
  for (std::size_t j = 0; j < source.size(); ++j) source[j] = j;
  for (const auto& [a, b] : pairs) {
    if (a >= heatmap.channels || b >= heatmap.channels) {
      throw ConfigError("joint pairing refers to a channel beyond " +
                        std::to_string(heatmap.channels));
    }
    source[a] = b;
    source[b] = a;
  }
  Heatmap out(heatmap.channels, heatmap.height, heatmap.width);
  for (std::size_t j = 0; j < heatmap.channels; ++j)
    for (std::size_t r = 0; r < heatmap.height; ++r)
      for (std::size_t c = 0; c < heatmap.width; ++c)
        out.at(j, r, heatmap.width - 1 - c) = heatmap.at(source[j], r, c);
  return out;
}

Heatmap flip_averaged_heatmaps(const HeatmapPredictor& predict, const Matrix& image,
                               const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  if (pairs.empty()) throw ConfigError("flip averaging needs a left/right pairing table");
  Heatmap direct = predict(image);
  const Heatmap flipped = mirror_heatmap(predict(mirror_image(image)), pairs);
  if (!direct.same_shape(flipped)) throw ShapeError("predictor changed output shape");
  for (std::size_t i = 0; i < direct.values.size(); ++i) {
    direct.values[i] = 0.5 * (direct.values[i] + flipped.values[i]);
  }
  return direct;
}

// ---------------------------------------------------------------------------
// Dataset text format

namespace {

void put_number(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 6);
  out.append(buf, res.ptr);
}

class Scanner {
 public:
  explicit Scanner(std::string text) : text_(std::move(text)) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ >= text_.size(); }

  std::string line() {
    const std::size_t start = pos_;
    const std::size_t nl = text_.find('\n', pos_);
    if (nl == std::string::npos) throw ParseError("missing line terminator", text_.size());
    pos_ = nl + 1;
    return text_.substr(start, nl - start);
  }

  // Parses `count` whitespace-separated numbers that make up exactly one line.
  std::vector<double> number_line(std::size_t count, const char* what) {
    std::vector<double> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      if (i > 0) {
        if (pos_ >= text_.size() || text_[pos_] != ' ') {
          throw ParseError(std::string("expected space in ") + what, pos_);
        }
        ++pos_;
      }
      double v = 0.0;
      const char* first = text_.data() + pos_;
      const char* last = text_.data() + text_.size();
      auto res = std::from_chars(first, last, v);
      if (res.ec != std::errc() || res.ptr == first) {
        throw ParseError(std::string("malformed number in ") + what, pos_);
      }
      pos_ += static_cast<std::size_t>(res.ptr - first);
      out.push_back(v);
    }
    if (pos_ >= text_.size() || text_[pos_] != '\n') {
      throw ParseError(std::string("expected end of line after ") + what, pos_);
    }
    ++pos_;
    return out;
  }

 private:
  std::string text_;
  std::size_t pos_ = 0;
};

std::size_t header_field(const std::string& header, const std::string& key) {
  const std::string needle = " " + key + "=";
  const std::size_t at = header.find(needle);
  if (at == std::string::npos) throw ParseError("dataset header lacks " + key, 0);
  std::size_t value = 0;
  const char* first = header.data() + at + needle.size();
  auto res = std::from_chars(first, header.data() + header.size(), value);
  if (res.ec != std::errc()) throw ParseError("bad value for " + key + " in header", at);
  return value;
}

}  // namespace

void write_dataset(std::ostream& out, const std::vector<PoseSample>& samples,
                   const PoseConfig& config) {
  std::string text = "AMIL-DATA v1 S=" + std::to_string(config.image_size) +
                     " J=" + std::to_string(config.joint_count) +
                     " P=" + std::to_string(config.patch_size) +
                     " count=" + std::to_string(samples.size()) + "\n";
  for (const auto& s : samples) {
    if (s.image.rows() != config.image_size || s.keypoints.size() != config.joint_count) {
      throw ShapeError("sample does not match the dataset configuration");
    }
    bool first = true;
    for (double v : s.image.values()) {
      if (!first) text.push_back(' ');
      put_number(text, v);
      first = false;
    }
    text.push_back('\n');
    first = true;
    for (const auto& k : s.keypoints) {
      if (!first) text.push_back(' ');
      put_number(text, k.x);
      text.push_back(' ');
      put_number(text, k.y);
      text.append(k.visible ? " 1" : " 0");
      first = false;
    }
    text.push_back('\n');
  }
  out << text;
}

std::vector<PoseSample> read_dataset(std::istream& in, PoseConfig& config) {
  Scanner scan(std::string(std::istreambuf_iterator<char>(in), {}));
  const std::string header = scan.line();
  if (header.rfind("AMIL-DATA ", 0) != 0) throw ParseError("not an AMIL-DATA file", 0);
  if (header.rfind("AMIL-DATA v1 ", 0) != 0) {
    throw VersionError("unsupported dataset version in header '" + header + "'");
  }
  config.image_size = header_field(header, "S");
  config.joint_count = header_field(header, "J");
  config.patch_size = header_field(header, "P");
  const std::size_t count = header_field(header, "count");
  config.validate();

  const std::size_t pixels = config.image_size * config.image_size;
  const std::size_t g = config.grid();
  std::vector<PoseSample> samples;
  samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    PoseSample s;
    s.image = Matrix(config.image_size, config.image_size, scan.number_line(pixels, "image row"));
    const auto kp = scan.number_line(3 * config.joint_count, "keypoint row");
    for (std::size_t j = 0; j < config.joint_count; ++j) {
      const double vis = kp[3 * j + 2];
      if (vis != 0.0 && vis != 1.0) {
        throw ParseError("visibility flag must be 0 or 1", scan.offset());
      }
      s.keypoints.push_back({kp[3 * j], kp[3 * j + 1], vis == 1.0});
    }
    s.heatmaps = render_heatmap(s.keypoints, g, g, config.sigma_h,
                                static_cast<double>(config.patch_size));
    samples.push_back(std::move(s));
  }
  if (!scan.at_end()) throw ParseError("trailing data after the last sample", scan.offset());
  return samples;
}

void save_dataset(const std::string& path, const std::vector<PoseSample>& samples,
                  const PoseConfig& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_dataset(out, samples, config);
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::vector<PoseSample> load_dataset(const std::string& path, PoseConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return read_dataset(in, config);
}

}  // namespace amil
