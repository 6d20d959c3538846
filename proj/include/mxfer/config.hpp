#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mxfer/attacks.hpp"
#include "mxfer/data.hpp"
#include "mxfer/defenses.hpp"
#include "mxfer/hypotheses.hpp"
#include "mxfer/merging.hpp"
#include "mxfer/training.hpp"

namespace mxfer::config {

/// Parse or schema error at a source position (1-based; 0 when unknown).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& file, std::size_t line, std::size_t column, const std::string& what);
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_, column_;
};

constexpr std::int64_t kSchemaVersion = 1;

struct IdxSource {
  std::filesystem::path images;
  std::optional<std::filesystem::path> labels;
};

struct DataConfig {
  /// "synthetic" or "idx".
  std::string source = "synthetic";
  SyntheticTaskParams synthetic;
  std::vector<IdxSource> idx;
  double test_fraction = 0.5;
};

struct CrossArchConfig {
  bool enabled = false;
  ModelSpec model;
  SgdConfig training;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output = "runs/desk";
  DataConfig data;
  ModelSpec model;
  PretrainConfig pretrain;
  SgdConfig finetune;
  std::vector<merging::Method> merge_methods;
  bool surgery = true;
  merging::MergeSpec merge;  // shared lambda, trim, ada and surgery settings
  std::vector<attacks::AttackSpec> attacks;
  /// Targeted variants (reported separately, not part of the hypothesis tests).
  std::vector<attacks::AttackSpec> targeted_attacks;
  std::vector<defenses::DefenseSpec> defenses;
  std::size_t defense_task = 0;
  double alpha = 0.05;
  double q = 0.05;
  std::vector<hypotheses::HypothesisSpec> hypotheses;
  std::size_t probe_count = 256;
  std::size_t probe_task = 0;
  CrossArchConfig cross_arch;

  /// SHA-256 over the canonical serialization of every field above except `output` and
  /// `hypotheses` (those are registered separately in the manifest).
  std::string hash() const;
  std::string canonical() const;
};

/// Sets the top-level seed and every seed derived from it.
void reseed(ExperimentConfig& config, std::uint64_t seed);

/// Reads a config file (and the hypothesis file it references, relative to it).
ExperimentConfig load(const std::filesystem::path& path);
ExperimentConfig parse(const std::string& text, const std::filesystem::path& origin);
std::vector<hypotheses::HypothesisSpec> load_hypotheses(const std::filesystem::path& path);
std::vector<hypotheses::HypothesisSpec> parse_hypotheses(const std::string& text, const std::string& origin);

/// The desk configuration as TOML text (what `init` writes).
std::string default_config_text();
std::string default_hypotheses_text();

}  // namespace mxfer::config
