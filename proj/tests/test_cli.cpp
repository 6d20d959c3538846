#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mxfer/config.hpp"

using std::filesystem::path;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(schema = 1
seed = 3

[data]
tasks = 2
classes = 3
train_per_task = 96
test_per_task = 64

[model]
hidden = [16, 8]

[pretrain]
epochs = 1
pretext_clusters = 4
kmeans_iterations = 5
probe_epochs = 1

[finetune]
epochs = 3

[merge.adamerging]
iterations = 5

[merge.surgery_adapter]
rank = 2
iterations = 5

[attacks]
iterations = 2
query_budget = 12

[defenses]
crops = 3

[analysis]
probes = 16

[cross_architecture]
enabled = false
)";

std::string slurp(const path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Everything after the provenance line.
std::string body(const path& p) {
  const std::string s = slurp(p);
  return s.substr(s.find('\n') + 1);
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("mxfer_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    std::ofstream(root_ / "tiny.toml") << kTinyConfig;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  /// Exit code of `mxfer <args>`; output goes to `log`.
  static int run(const std::string& args) {
    const std::string cmd = std::string(MXFER_CLI) + " " + args + " > " + (root_ / "log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  static std::string log() { return slurp(root_ / "log"); }
  static std::string tiny(const path& out) {
    return "--config " + (root_ / "tiny.toml").string() + " --out " + out.string() + " --workers 1";
  }

  static path root_;
};

path Cli::root_;

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("--no-such-flag"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run(tiny(root_ / "u") + " --stage nowhere all"), 2);
}

TEST_F(Cli, StageBeforeItsDependenciesExitsThree) {
  EXPECT_EQ(run(tiny(root_ / "dep") + " merge"), 3);
  ASSERT_EQ(run(tiny(root_ / "dep") + " init"), 0) << log();
  EXPECT_EQ(run(tiny(root_ / "dep") + " finetune"), 3);
  EXPECT_NE(log().find("pretrain"), std::string::npos);
}

TEST_F(Cli, ConfigErrorExitsFourWithPosition) {
  std::ofstream(root_ / "bad.toml") << "schema = 1\n[finetune]\nepochz = 2\n";
  EXPECT_EQ(run("--config " + (root_ / "bad.toml").string() + " --out " + (root_ / "bad").string() + " init"), 4);
  EXPECT_NE(log().find("bad.toml:3:1"), std::string::npos) << log();
}

TEST_F(Cli, FullRunIsIdempotentReproducibleAndTamperEvident) {
  const path a = root_ / "a", b = root_ / "b";
  ASSERT_EQ(run(tiny(a) + " all"), 0) << log();
  EXPECT_NE(log().find("all: 10 stage(s) executed"), std::string::npos) << log();
  for (const char* f : {"manifest.json", "report.md", "eval/accuracy.csv", "eval/rbar.csv", "stats/H1.csv",
                        "stats/hypotheses.md", "defense/defense.csv", "analysis/gradient.csv"})
    EXPECT_TRUE(fs::exists(a / f)) << f;

  // Rerun: nothing executes.
  ASSERT_EQ(run(tiny(a) + " all"), 0) << log();
  EXPECT_NE(log().find("all: 0 stage(s) executed"), std::string::npos) << log();
  ASSERT_EQ(run(tiny(a) + " report"), 0);
  EXPECT_NE(log().find("report: up to date"), std::string::npos);

  // Same config, same seed: identical result bodies.
  ASSERT_EQ(run(tiny(b) + " all"), 0) << log();
  for (const char* f : {"eval/accuracy.csv", "eval/rbar.csv", "eval/square_direct.csv", "stats/H1.csv",
                        "stats/H3.csv", "defense/defense.csv", "analysis/gradient.csv"})
    EXPECT_EQ(body(a / f), body(b / f)) << f;
  EXPECT_EQ(body(a / "eval/asr/t0_untargeted.csv"), body(b / "eval/asr/t0_untargeted.csv"));

  // Provenance header on every CSV.
  EXPECT_EQ(slurp(a / "eval/accuracy.csv").rfind("# mxfer ", 0), 0u);

  // A different config against the same store is refused.
  std::ofstream(root_ / "other.toml") << std::string(kTinyConfig).replace(std::string(kTinyConfig).find("seed = 3"), 8, "seed = 4");
  EXPECT_EQ(run("--config " + (root_ / "other.toml").string() + " --out " + a.string() + " merge"), 5);

  // Tampering with an upstream artifact is detected by any downstream stage.
  {
    std::fstream f(b / "checkpoints" / "finetuned_0.mxb", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-5, std::ios::end);
    f.put('\x42');
  }
  EXPECT_EQ(run(tiny(b) + " report"), 5);
  EXPECT_NE(log().find("finetuned_0.mxb"), std::string::npos) << log();
  // Forcing finetune rewrites the checkpoint and invalidates everything downstream.
  ASSERT_EQ(run(tiny(b) + " --force finetune"), 0) << log();
  EXPECT_EQ(run(tiny(b) + " report"), 3);
}

TEST_F(Cli, EditedHypothesisAfterInitIsRefused) {
  const path d = root_ / "hark";
  fs::create_directories(d);
  std::ofstream(d / "cfg.toml") << std::string(kTinyConfig) + "\n[statistics]\nhypotheses = \"hyp.toml\"\n";
  std::ofstream(d / "hyp.toml") << mxfer::config::default_hypotheses_text();
  ASSERT_EQ(run("--config " + (d / "cfg.toml").string() + " --out " + (d / "out").string() + " --stage eval all"), 0)
      << log();
  ASSERT_TRUE(fs::exists(d / "hyp.toml"));
  std::string h = slurp(d / "hyp.toml");
  h.replace(h.find("\"TI-FGSM\""), 9, "\"FGSM\"");
  std::ofstream(d / "hyp.toml") << h;
  EXPECT_EQ(run("--config " + (d / "cfg.toml").string() + " --out " + (d / "out").string() + " stats"), 5);
  EXPECT_NE(log().find("hypothes"), std::string::npos) << log();
}
