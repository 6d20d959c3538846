#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mxfer/config.hpp"

namespace mxfer::pipeline {

/// Toolkit version baked in at configure time (git describe when available).
std::string version();

enum class Stage { Init, Pretrain, Finetune, Merge, Attack, Eval, Stats, Defend, GradAnalysis, Report };

std::string to_string(Stage stage);
std::optional<Stage> parse_stage(const std::string& name);
/// Every stage in execution order.
const std::vector<Stage>& all_stages();
/// Direct prerequisites.
std::vector<Stage> dependencies(Stage stage);

/// A prerequisite stage has not completed.
class DependencyError : public std::runtime_error {
 public:
  DependencyError(Stage stage, Stage missing);
  Stage missing() const { return missing_; }

 private:
  Stage missing_;
};

/// Manifest missing or inconsistent, or an artifact no longer matches its recorded hash.
class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::filesystem::path out;
  std::size_t workers = 1;
  bool force = false;
};

/// Runs stages over the artifact store rooted at `options.out`, recording completion and
/// content hashes in `manifest.json`. Completed stages are skipped unless forced.
class Runner {
 public:
  Runner(config::ExperimentConfig config, Options options);
  ~Runner();

  /// True when the stage was executed, false when the manifest already had it.
  bool run(Stage stage);
  /// Runs every stage up to and including `last`.
  void run_all(std::optional<Stage> last = std::nullopt);

  /// Stages executed (not skipped) by this runner.
  const std::vector<Stage>& executed() const;
  std::filesystem::path manifest_path() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace mxfer::pipeline
