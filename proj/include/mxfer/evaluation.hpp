#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mxfer/attacks.hpp"
#include "mxfer/model.hpp"

namespace mxfer::evaluation {

/// Share of positions where the two prediction lists differ.
double asr_from_predictions(const std::vector<std::size_t>& clean, const std::vector<std::size_t>& adversarial);
/// Share of adversarial predictions hitting their target label.
double targeted_asr_from_predictions(const std::vector<std::size_t>& adversarial,
                                     const std::vector<std::size_t>& targets);

double asr(const Classifier& target, const Tensor& x, const Tensor& x_adv);
double targeted_asr(const Classifier& target, const Tensor& x_adv, const std::vector<std::size_t>& targets);
/// Untargeted or targeted ASR of `batch` on `target`, following batch.spec.targeted.
double asr(const Classifier& target, const attacks::AdvBatch& batch);

/// Rows are surrogates, columns are targets (the surrogates first, then merged models).
struct AsrMatrix {
  std::size_t task = 0;
  std::string attack;
  std::vector<std::string> surrogates;
  std::vector<std::string> targets;
  std::vector<std::vector<double>> values;

  std::size_t surrogate_index(const std::string& name) const;
  std::size_t target_index(const std::string& name) const;
  double at(const std::string& surrogate, const std::string& target) const;
  /// [A]_{s,s}.
  double white_box(const std::string& surrogate) const { return at(surrogate, surrogate); }
};

/// Mean relative transfer ASR; empty when the white-box ASR is zero.
struct RelativeTransferAsr {
  std::optional<double> value;
  bool defined() const { return value.has_value(); }
};

RelativeTransferAsr relative_transfer_asr(double white_box, std::span<const double> transfer);
/// Averages over targets that are not surrogates.
RelativeTransferAsr relative_transfer_asr(const AsrMatrix& matrix, const std::string& surrogate);

struct NamedModel {
  std::string name;
  const Classifier* model;
};

/// [A]_{s,l} = ASR on target l of the batch crafted on surrogate s. `batches` maps surrogate
/// name to its adversarial batch; each batch is reused across every target.
AsrMatrix build_asr_matrix(std::size_t task, const std::string& attack,
                           const std::vector<NamedModel>& surrogates, const std::vector<NamedModel>& targets,
                           const std::map<std::string, attacks::AdvBatch>& batches);

/// Header "surrogate,<targets...>,Rbar"; an undefined Rbar is written as "undefined".
std::string to_csv(const AsrMatrix& matrix);

}  // namespace mxfer::evaluation
