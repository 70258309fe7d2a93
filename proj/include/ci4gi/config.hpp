#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ci4gi/dataset.hpp"
#include "ci4gi/trainer.hpp"

namespace ci4gi {

struct DatasetSource {
  std::optional<std::filesystem::path> manifest;
  std::optional<SyntheticParams> synthetic;
  std::optional<std::size_t> coldstart_k;  // cap on training memberships per user
};

/// Everything a CLI run depends on:
///   { "seed", "dataset": {...}, "model": {...}, "train": {...}, "loss": {...}, "ablation": {...} }
struct RunConfig {
  TrainConfig train;
  DatasetSource data;
};

nlohmann::json to_json(const RunConfig& cfg);

/// Strict decoding: unknown keys and type mismatches are collected and
/// reported together in one ConfigError. Missing keys keep their defaults.
/// Relative manifest paths resolve against `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

/// Sets a dotted path in `doc` from "a.b.c=value". The value is read as JSON
/// when it parses (numbers, booleans, null, arrays), otherwise as a string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

/// Defaults, then the optional file, then each override in order.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);

// FNV-1a over the canonical (sorted-key) JSON serialization.
std::uint64_t config_hash(const RunConfig& cfg);
std::string hex64(std::uint64_t v);

InteractionDataset load_run_dataset(const RunConfig& cfg);

// `git describe` of the source tree at build time.
std::string_view build_id();

/// {"config_hash", "seed", "build_id"} stamped into every output.
nlohmann::json reproducibility_block(const RunConfig& cfg);

struct AblationVariant {
  std::string id;  // "full", "A" .. "I"
  std::string description;
  AblationFlags flags;
};

// The full model followed by variants A-I.
std::vector<AblationVariant> ablation_variants();

}  // namespace ci4gi
