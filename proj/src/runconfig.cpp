#include "amil/runconfig.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>

#include "amil/errors.hpp"

namespace amil {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

double parse_real(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("setting '" + key + "' expects a number, got '" + value + "'");
  }
  return out;
}

std::uint64_t parse_count(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("setting '" + key + "' expects a nonnegative integer, got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "yes" || value == "1") return true;
  if (value == "false" || value == "off" || value == "no" || value == "0") return false;
  throw ConfigError("setting '" + key + "' expects on/off, got '" + value + "'");
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_count(std::uint64_t v) { return std::to_string(v); }
std::string format_bool(bool v) { return v ? "on" : "off"; }

struct Setting {
  SettingInfo info;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define AMIL_REAL(key, field, groups, help)                                             \
  Setting {                                                                             \
    {key, help, groups},                                                                \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_real(k, v); }, \
        [](const RunConfig& c) { return format_real(c.field); }                         \
  }
#define AMIL_COUNT(key, field, groups, help)                                             \
  Setting {                                                                              \
    {key, help, groups},                                                                 \
        [](RunConfig& c, const std::string& k, const std::string& v) {                   \
          c.field = static_cast<decltype(c.field)>(parse_count(k, v));                   \
        },                                                                               \
        [](const RunConfig& c) { return format_count(static_cast<std::uint64_t>(c.field)); } \
  }
#define AMIL_BOOL(key, field, groups, help)                                             \
  Setting {                                                                             \
    {key, help, groups},                                                                \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); }, \
        [](const RunConfig& c) { return format_bool(c.field); }                         \
  }

const std::vector<Setting>& settings() {
  constexpr unsigned D = kDataSettings;
  constexpr unsigned T = kTrainSettings;
  constexpr unsigned E = kEvalSettings;
  static const std::vector<Setting> table = {
      AMIL_COUNT("seed", train.seed, D | T, "random seed"),
      AMIL_COUNT("count", count, D, "training split size"),
      AMIL_COUNT("val-count", val_count, D, "validation split size"),
      AMIL_COUNT("test-count", test_count, D, "test split size"),
      AMIL_COUNT("image-size", pose.image_size, D, "image side in pixels"),
      AMIL_COUNT("joints", pose.joint_count, D, "joint count (7 or 16)"),
      AMIL_COUNT("patch-size", pose.patch_size, D, "patch side in pixels"),
      AMIL_REAL("limb-thickness", pose.limb_thickness, D, "limb thickness in pixels"),
      AMIL_REAL("sigma-h", pose.sigma_h, D | T | E, "heatmap Gaussian width in cells"),
      AMIL_REAL("scale-min", pose.scale_min, D, "smallest figure scale"),
      AMIL_REAL("scale-max", pose.scale_max, D, "largest figure scale"),
      AMIL_REAL("noise", pose.noise, D, "background noise amplitude"),
      AMIL_BOOL("occlusion", pose.occlusion, D, "mask a square around one extremity"),
      AMIL_COUNT("iterations", train.total_iterations, T, "training iterations"),
      AMIL_REAL("learning-rate", train.learning_rate, T, "base learning rate"),
      AMIL_REAL("weight-decay", train.weight_decay, T, "decoupled weight decay"),
      AMIL_COUNT("decay-every", train.decay_every, T, "iterations between learning-rate decays"),
      AMIL_REAL("decay-base", train.decay_base, T, "multiplicative learning-rate decay"),
      AMIL_COUNT("batch-size", train.batch_size, T, "samples per iteration"),
      AMIL_COUNT("hidden", train.hidden, T, "hidden layer width"),
      AMIL_COUNT("levels", train.levels, T, "MIL levels"),
      AMIL_COUNT("pool-iterations", train.pool_iterations, T, "adjust pooling iterations"),
      Setting{{"pooling", "adjust|mean|max", T},
              [](RunConfig& c, const std::string&, const std::string& v) {
                c.train.pooling = parse_pooling_mode(v);
              },
              [](const RunConfig& c) { return to_string(c.train.pooling); }},
      AMIL_BOOL("adversarial", train.adversarial, T, "train with the discriminator"),
      AMIL_REAL("m-plus", train.loss.m_plus, T, "upper margin"),
      AMIL_REAL("m-minus", train.loss.m_minus, T, "lower margin"),
      AMIL_REAL("lambda", train.loss.lambda, T, "bag/instance gap weight"),
      AMIL_REAL("prob-lambda", train.loss.prob_lambda, T, "instance probability rate"),
      AMIL_REAL("gamma", train.loss.gamma, T, "balance equilibrium ratio"),
      AMIL_REAL("omega-k", train.loss.omega_k, T, "balance step size"),
      AMIL_REAL("divergence-limit", train.divergence_limit, T, "abort when a loss exceeds this"),
      AMIL_COUNT("checkpoint-every", checkpoint_every, T, "iterations between checkpoints"),
      AMIL_REAL("r", r, E, "PCK tolerance"),
      AMIL_BOOL("flip", flip, E, "flip-averaged decoding"),
      AMIL_COUNT("workers", workers, E, "evaluation worker threads"),
  };
  return table;
}

#undef AMIL_REAL
#undef AMIL_COUNT
#undef AMIL_BOOL

}  // namespace

void RunConfig::validate() const {
  train.validate();
  pose.validate();
  if (!(r > 0.0 && r <= 1.0)) throw ConfigError("r must lie in (0, 1]");
  if (checkpoint_every < 1) throw ConfigError("checkpoint-every must be at least 1");
  if (workers < 1) throw ConfigError("workers must be at least 1");
}

const std::vector<SettingInfo>& setting_catalog() {
  static const std::vector<SettingInfo> catalog = [] {
    std::vector<SettingInfo> out;
    for (const auto& s : settings()) out.push_back(s.info);
    return out;
  }();
  return catalog;
}

std::string normalize_key(std::string_view key) {
  std::string out(key);
  for (char& c : out) {
    if (c == '_') c = '-';
  }
  return out;
}

std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t eol = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, eol - pos);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (!trim(line).empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", pos);
      const std::string key = normalize_key(trim(line.substr(0, eq)));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ParseError("empty key", pos);
      if (!out.emplace(key, value).second) throw ParseError("repeated key '" + key + "'", pos);
    }
    pos = eol + 1;
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const std::string k = normalize_key(key);
  for (const auto& s : settings()) {
    if (s.info.key == k) {
      s.set(cfg, k, value);
      return;
    }
  }
  throw ConfigError("unknown setting '" + key + "'");
}

void apply_settings(RunConfig& cfg, const std::map<std::string, std::string>& values) {
  for (const auto& [k, v] : values) apply_setting(cfg, k, v);
}

std::string render_config(const RunConfig& cfg, unsigned groups) {
  std::string out;
  for (const auto& s : settings()) {
    if ((s.info.groups & groups) == 0) continue;
    out += s.info.key + " = " + s.get(cfg) + "\n";
  }
  return out;
}

}  // namespace amil
