#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <thread>

#include "mxfer/config.hpp"
#include "mxfer/hypotheses.hpp"
#include "mxfer/io.hpp"
#include "mxfer/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mxfer;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kDependency = 3, kConfig = 4, kIntegrity = 5 };

// Writes the desk config and its hypothesis file when `path` does not exist yet.
void write_defaults(const fs::path& path) {
  if (fs::exists(path)) return;
  io::write_text(path, config::default_config_text());
  const fs::path hyp = (path.has_parent_path() ? path.parent_path() : fs::path(".")) / "hypotheses.toml";
  if (!fs::exists(hyp)) io::write_text(hyp, config::default_hypotheses_text());
  std::cerr << "wrote default config " << path << " and " << hyp << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-merging transfer-attack toolkit"};
  app.set_version_flag("--version", pipeline::version());
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path = "mxfer.toml";
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  bool force = false;
  std::string stage;
  app.add_option("--config", config_path, "Experiment config (TOML)")->capture_default_str();
  app.add_option("--out", out, "Output directory (overrides the config)");
  app.add_option("--seed", seed, "Seed (overrides the config)");
  app.add_option("--workers", workers, "Attack worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_flag("--force", force, "Recompute even if the manifest has the stage");
  app.add_option("--stage", stage, "With 'all': last stage to run");

  std::vector<std::pair<CLI::App*, std::optional<pipeline::Stage>>> commands;
  for (pipeline::Stage s : pipeline::all_stages())
    commands.emplace_back(app.add_subcommand(pipeline::to_string(s), "Run the " + pipeline::to_string(s) + " stage"), s);
  commands.emplace_back(app.add_subcommand("all", "Run every stage in order"), std::nullopt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  std::optional<pipeline::Stage> last;
  if (!stage.empty()) {
    last = pipeline::parse_stage(stage);
    if (!last) {
      std::cerr << "unknown stage '" << stage << "'\n" << app.help();
      return kUsage;
    }
  }

  try {
    const bool is_init = app.got_subcommand("init");
    if (is_init || app.got_subcommand("all")) write_defaults(config_path);
    config::ExperimentConfig cfg = config::load(config_path);
    if (seed) config::reseed(cfg, *seed);
    pipeline::Options opt;
    opt.out = out.empty() ? cfg.output : fs::path(out);
    opt.workers = workers;
    opt.force = force;
    pipeline::Runner runner(std::move(cfg), opt);
    for (const auto& [cmd, s] : commands) {
      if (!cmd->parsed()) continue;
      if (s) {
        const bool ran = runner.run(*s);
        std::cerr << pipeline::to_string(*s) << (ran ? ": done" : ": up to date") << "\n";
      } else {
        runner.run_all(last);
        std::cerr << "all: " << runner.executed().size() << " stage(s) executed\n";
      }
    }
    std::cerr << "artifacts in " << opt.out << "\n";
    return kOk;
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const pipeline::DependencyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDependency;
  } catch (const pipeline::ManifestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIntegrity;
  } catch (const hypotheses::UnregisteredHypothesis& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIntegrity;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
