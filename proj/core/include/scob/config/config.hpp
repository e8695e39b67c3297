#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scob/trainer/trainer.hpp"

namespace scob {

/// One settable field of TrainConfig, addressed by a dotted key such as
/// "train.steps" or "data.real.render.clutter_rects".
struct ConfigKey {
  std::string key;
  std::string help;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, std::string_view)> set;  // throws ConfigError
};

// Every key, in a fixed order.
const std::vector<ConfigKey>& config_keys();

// Throws ConfigError for unknown keys or unparsable values.
void set_config_value(TrainConfig& config, std::string_view key, std::string_view value);
std::string get_config_value(const TrainConfig& config, std::string_view key);

// (key, value) for every key, in registry order.
std::vector<std::pair<std::string, std::string>> config_snapshot(const TrainConfig& config);

/// Applies "key = value" lines. Blank lines and lines starting with '#' are
/// ignored; surrounding whitespace is trimmed. Errors name `origin` and the
/// line number.
void apply_config_text(TrainConfig& config, std::string_view text, std::string_view origin = "config");
void apply_config_file(TrainConfig& config, const std::filesystem::path& path);

// The whole configuration in the file format above.
std::string format_config(const TrainConfig& config);

// Charset presets accepted by vocab.charset besides "literal:<chars>".
//   printable_ascii  0x20..0x7E
//   upper_digits     space, A-Z, 0-9
std::string charset_from_spec(std::string_view spec);  // throws ConfigError
std::string charset_to_spec(std::string_view charset);

// Desk-scale defaults: 128-pixel images, upper_digits charset, clean
// synthetic source and a cluttered real source mixed 50/50.
TrainConfig desk_config();

}  // namespace scob
