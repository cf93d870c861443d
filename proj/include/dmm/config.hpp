#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmm/data.hpp"
#include "dmm/format.hpp"
#include "dmm/trainer.hpp"

namespace dmm {

// Flat text config:
//
//   # comment
//   key = value
//
// One pair per line, whitespace around key and value is trimmed, later
// duplicates are an error. Lists are comma separated. Booleans are
// true/false. Keys under "artifact." are informational and ignored on load.

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in, const std::string& source);
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);

/// Every key accepted by apply_train_config / apply_synth_config.
const std::vector<std::string>& train_config_keys();
const std::vector<std::string>& synth_config_keys();

/// Overwrites the fields named in `kv`; keys of other sections are skipped.
/// Throws ConfigError for a malformed value.
void apply_train_config(TrainConfig& config, const KeyValues& kv);
void apply_synth_config(SynthConfig& config, const KeyValues& kv);

KeyValues to_key_values(const TrainConfig& config);
KeyValues to_key_values(const SynthConfig& config);

}  // namespace dmm
