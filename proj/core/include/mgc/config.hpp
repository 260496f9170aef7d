#pragma once

#include <map>
#include <string>
#include <vector>

#include "mgc/trainer.hpp"

namespace mgc::config {

/// Parse a flat key=value config file. '#' starts a comment; blank lines are
/// ignored. Malformed lines raise with the line number.
std::map<std::string, std::string> parse_file(const std::string& path);

/// Merge "key=value" override strings (command line) into a parsed map.
void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& overrides);

/// Build a TrainConfig. model_preset (if present) is applied first, then the
/// remaining keys. Unknown keys raise, listing every valid key.
trainer::TrainConfig make_train_config(const std::map<std::string, std::string>& kv);

/// Lossless round-trip of a TrainConfig back to the key=value form (doubles
/// printed with 17 significant digits); used to embed configs in checkpoints.
std::map<std::string, std::string> to_kv(const trainer::TrainConfig& cfg);

const std::vector<std::string>& valid_keys();

}  // namespace mgc::config
