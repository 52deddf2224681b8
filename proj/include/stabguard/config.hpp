#pragma once

// Flat `key = value` experiment configuration.
//
//   # comment
//   task = sequence
//   optimizer.lr = 5e-4
//   data.phrase = "she sells sea shells "   # quotes keep edge spaces
//
// The `task` key selects the preset every other key is applied on top of.
// Later assignments win, and overrides are applied after the file.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stabguard/harness.hpp"

namespace stabguard {

/// Parses config text plus `key=value` overrides. Throws ConfigError with
/// the offending line or key on any problem, including epsilon <= 0.
ExperimentConfig parse_config(std::string_view text, std::span<const std::string> overrides = {});

/// Reads and parses a file; a missing or unreadable file is a ConfigError
/// that names the path.
ExperimentConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

/// Assigns one key on an existing config.
void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value);

/// Canonical text of every key, doubles in round-trip precision. Parsing the
/// result yields an equal config.
std::string format_config(const ExperimentConfig& cfg);

/// (key, canonical value text) for every key, in canonical order.
std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg);

} // namespace stabguard
