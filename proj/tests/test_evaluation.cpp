#include <gtest/gtest.h>

#include <numeric>

#include "desk.hpp"
#include "mxfer/attacks.hpp"
#include "mxfer/evaluation.hpp"
#include "mxfer/io.hpp"
#include "support.hpp"

using namespace mxfer;
using evaluation::AsrMatrix;

namespace {

// Logits are fixed per row index of a lookup, so predictions can be dictated exactly.
class ConstantModel : public Classifier {
 public:
  std::size_t input_dim() const override { return 2; }
  std::size_t num_classes() const override { return 3; }
  Tensor logits(const Tensor& x) const override { return Tensor({x.dim(0), 3}); }
  ad::Var logits(ad::Tape& tape, const ad::Var& x) const override {
    return ad::matmul(x, tape.constant(Tensor({2, 3})));
  }
};

AsrMatrix table_row(const std::string& surrogate, const std::vector<double>& row_percent) {
  AsrMatrix m;
  m.task = 0;
  m.attack = "NI-FGSM";
  m.surrogates = {"pretrained", "finetuned"};
  m.targets = {"pretrained", "finetuned", "WA", "TA", "TIES", "AM", "WA+RS", "TA+RS", "TIES+RS", "AM+RS"};
  m.values.assign(2, std::vector<double>(m.targets.size(), 0.5));
  auto& row = m.values[m.surrogate_index(surrogate)];
  for (std::size_t i = 0; i < row_percent.size(); ++i) row[i] = row_percent[i] / 100.0;
  return m;
}

}  // namespace

TEST(Asr, HandCountedFixture) {
  EXPECT_DOUBLE_EQ(evaluation::asr_from_predictions({1, 2, 0}, {2, 2, 1}), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(evaluation::targeted_asr_from_predictions({2, 2, 1}, {2, 0, 1}), 2.0 / 3.0);
}

TEST(Asr, LengthMismatchRejected) {
  EXPECT_ANY_THROW(evaluation::asr_from_predictions({1, 2}, {1}));
}

TEST(Asr, UnchangedInputsGiveZero) {
  std::mt19937_64 rng(1);
  const fixtures::LinearModel model(fixtures::random_tensor({4, 3}, rng), fixtures::random_tensor({3}, rng));
  const Tensor x = fixtures::random_inputs(10, 4, rng);
  EXPECT_EQ(evaluation::asr(model, x, x), 0.0);
}

TEST(Asr, ConstantModelGivesZero) {
  std::mt19937_64 rng(2);
  const ConstantModel model;
  EXPECT_EQ(evaluation::asr(model, fixtures::random_inputs(7, 2, rng), fixtures::random_inputs(7, 2, rng)), 0.0);
}

TEST(RelativeTransfer, AllTargetsEqualWhiteBox) {
  const std::vector<double> t(8, 0.7);
  EXPECT_DOUBLE_EQ(*evaluation::relative_transfer_asr(0.7, t).value, 1.0);
}

TEST(RelativeTransfer, DigitRowFineTunedSurrogate) {
  const auto m = table_row("finetuned", {93.24, 99.88, 98.90, 99.30, 99.20, 99.82, 99.40, 99.60, 99.60, 99.82});
  const auto r = evaluation::relative_transfer_asr(m, "finetuned");
  ASSERT_TRUE(r.defined());
  // Table entries are rounded to 0.01 percentage points.
  EXPECT_NEAR(*r.value * 100.0, 99.57, 0.005);
}

TEST(RelativeTransfer, TextureRowPretrainedSurrogateExceedsOne) {
  const auto m = table_row("pretrained", {32.66, 53.94, 71.28, 57.77, 63.83, 64.15, 68.30, 57.13, 61.49, 63.09});
  const auto r = evaluation::relative_transfer_asr(m, "pretrained");
  ASSERT_TRUE(r.defined());
  EXPECT_NEAR(*r.value * 100.0, 194.06, 0.005);
  EXPECT_GT(*r.value, 1.0);
}

TEST(RelativeTransfer, ZeroWhiteBoxIsUndefined) {
  const std::vector<double> t = {0.2, 0.3};
  EXPECT_FALSE(evaluation::relative_transfer_asr(0.0, t).defined());
  auto m = table_row("finetuned", {0.0, 0.0, 10.0});
  EXPECT_FALSE(evaluation::relative_transfer_asr(m, "finetuned").defined());
  EXPECT_NE(evaluation::to_csv(m).find("undefined"), std::string::npos);
}

TEST(RelativeTransfer, SigmaMeanIdentity) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> t(1 + rep % 9);
    for (auto& v : t) v = u(rng);
    const double wb = u(rng);
    const double mean = std::accumulate(t.begin(), t.end(), 0.0) / t.size();
    EXPECT_NEAR(*evaluation::relative_transfer_asr(wb, t).value * wb, mean, 1e-12);
  }
}

TEST(AsrMatrix, JsonRoundTripPreservesRbar) {
  const auto m = table_row("pretrained", {32.66, 53.94, 71.28, 57.77, 63.83, 64.15, 68.30, 57.13, 61.49, 63.09});
  const auto back = io::asr_matrix_from_json(io::json::parse(io::to_json(m).dump()));
  EXPECT_EQ(back.values, m.values);
  EXPECT_EQ(back.targets, m.targets);
  for (const auto& s : m.surrogates)
    EXPECT_NEAR(*evaluation::relative_transfer_asr(back, s).value, *evaluation::relative_transfer_asr(m, s).value, 1e-12);
}

TEST(AsrMatrix, TransferSemanticsAndWhiteBoxConsistency) {
  const auto& d = fixtures::desk_model();
  const TaskModel pre(d.spec, d.theta0, 0), ft(d.spec, d.finetuned[0], 0), other(d.spec, d.finetuned[1], 0);
  const Split s = d.tasks[0].attack_half();
  attacks::AttackSpec spec;
  spec.seed = 5;
  std::map<std::string, attacks::AdvBatch> batches = {
      {"pretrained", attacks::run_attack(pre, s.x, spec)}, {"finetuned", attacks::run_attack(ft, s.x, spec)}};
  const std::vector<evaluation::NamedModel> surrogates = {{"pretrained", &pre}, {"finetuned", &ft}};
  const std::vector<evaluation::NamedModel> targets = {{"pretrained", &pre}, {"finetuned", &ft}, {"other", &other}};
  const auto m = evaluation::build_asr_matrix(0, "NI-FGSM", surrogates, targets, batches);
  EXPECT_EQ(m.values.size(), 2u);
  EXPECT_EQ(m.values[0].size(), 3u);
  EXPECT_DOUBLE_EQ(m.white_box("finetuned"), evaluation::asr(ft, batches.at("finetuned")));
  for (const auto& row : m.values)
    for (double v : row) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  // Regenerating with the same seed reproduces the matrix.
  batches["finetuned"] = attacks::run_attack(ft, s.x, spec);
  EXPECT_EQ(evaluation::build_asr_matrix(0, "NI-FGSM", surrogates, targets, batches).values, m.values);
  batches.erase("pretrained");
  EXPECT_ANY_THROW(evaluation::build_asr_matrix(0, "NI-FGSM", surrogates, targets, batches));
}
