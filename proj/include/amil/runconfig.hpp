#ifndef AMIL_RUNCONFIG_HPP_
#define AMIL_RUNCONFIG_HPP_

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "amil/evalmetrics.hpp"
#include "amil/posedomain.hpp"
#include "amil/trainer.hpp"

namespace amil {

/// Everything a CLI run depends on, resolved from defaults, an optional
/// config file and flag overrides (in that order).
struct RunConfig {
  TrainConfig train;
  PoseConfig pose;
  std::string out_dir = "amil_out";
  std::size_t count = 1000;       // training split size
  std::size_t val_count = 200;
  std::size_t test_count = 200;
  std::size_t checkpoint_every = 50;
  double r = 0.2;
  bool flip = true;
  std::size_t workers = 1;

  void validate() const;
};

enum SettingGroup : unsigned {
  kDataSettings = 1u,
  kTrainSettings = 2u,
  kEvalSettings = 4u,
};

struct SettingInfo {
  std::string key;  // kebab-case; also the flag name
  std::string help;
  unsigned groups;
};

const std::vector<SettingInfo>& setting_catalog();

/// Parses flat `key = value` text. `#` starts a comment; blank lines are
/// ignored. Keys may use '-' or '_'. Throws ParseError with the byte offset of
/// a malformed line or a repeated key.
std::map<std::string, std::string> parse_config_text(std::string_view text);
std::map<std::string, std::string> read_config_file(const std::string& path);

/// Throws ConfigError for an unknown key or an unparsable value.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
void apply_settings(RunConfig& cfg, const std::map<std::string, std::string>& settings);

/// Every setting in the given groups as `key = value` lines, in catalog order;
/// reparsing the text reproduces the configuration exactly.
std::string render_config(const RunConfig& cfg, unsigned groups);

std::string normalize_key(std::string_view key);

}  // namespace amil

#endif  // AMIL_RUNCONFIG_HPP_
