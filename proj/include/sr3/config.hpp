#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sr3/denoiser.hpp"
#include "sr3/schedule.hpp"
#include "sr3/training.hpp"

namespace sr3 {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Environment variable naming the default corpus root.
inline constexpr const char* kDataRootEnv = "SR3_DATA_ROOT";

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::Linear;
  int steps = 2000;
  double beta_start = 1e-6;
  double beta_end = 1e-2;
  double cosine_offset = 0.008;

  NoiseSchedule build() const;
};

/// Everything a command needs, as one flat key = value tree.
struct RunConfig {
  std::string preset = "gen2";
  bool toy = false;
  std::string precision = "float";  // float | double
  std::uint64_t seed = 0;

  std::string data_root;
  int hr_size = 512;
  int scale = 8;
  double val_fraction = 0.05;
  int toy_train_count = 256;
  int toy_val_count = 16;

  DenoiserConfig model;  // model.image_size follows hr_size
  ScheduleSpec schedule;
  TrainConfig train;
  /// Reverse steps used by `sample`; 0 runs the full schedule.
  int sample_steps = 0;
  std::string out = "runs/default";

  DenoiserConfig denoiser() const;
  /// Cross-field checks; throws ConfigError naming the offending key.
  void validate() const;
  /// Resolved configuration as key = value text, keys in a fixed order.
  std::string dump() const;
  KeyValues to_key_values() const;
};

/// The two published configurations, verbatim.
RunConfig preset_config(const std::string& name);

/// Shrinks a preset to desk scale (base 16, hr 32, scale 4, T 200) keeping
/// its feature set: schedule kind, block count, dropout, attention at the
/// produced sizes among the preset's, EMA and clipping switches.
void apply_toy_scaling(RunConfig& cfg);

/// Parses "key = value" lines; '#' starts a comment. Throws ConfigError on
/// malformed lines.
KeyValues parse_config_text(const std::string& text);

/// Sets each key; throws ConfigError for unknown keys or unparsable values.
void apply_overrides(RunConfig& cfg, const KeyValues& values);

/// preset (from `preset_name`, else the file's "preset" key, else gen2) ->
/// toy scaling (when `toy` or the file says so) -> file keys -> overrides.
RunConfig resolve_config(const std::string& preset_name, bool toy,
                         const std::filesystem::path& config_file, const KeyValues& overrides);

/// Persists cfg.dump() to `path`.
void write_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace sr3
