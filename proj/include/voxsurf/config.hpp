#pragma once

#include "voxsurf/trainer.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace voxsurf {

/// `key = value` lines; `#` starts a comment. Later lines override earlier
/// ones. Throws Error on malformed lines.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text);

/// Apply one setting; throws Error("unknown config key: ...") or on a bad value.
void apply_setting(TrainConfig& config, const std::string& key, const std::string& value);

TrainConfig load_train_config(const std::filesystem::path& path);

/// Every accepted key with its current value, one `key = value` per line.
std::string dump_train_config(const TrainConfig& config);

}  // namespace voxsurf
