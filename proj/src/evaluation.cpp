#include "mxfer/evaluation.hpp"

#include <algorithm>
#include <stdexcept>

#include "mxfer/format.hpp"

namespace mxfer::evaluation {

double asr_from_predictions(const std::vector<std::size_t>& clean, const std::vector<std::size_t>& adversarial) {
  if (clean.size() != adversarial.size())
    throw std::invalid_argument("asr: " + std::to_string(clean.size()) + " clean vs " +
                                std::to_string(adversarial.size()) + " adversarial predictions");
  if (clean.empty()) throw std::invalid_argument("asr: empty batch");
  std::size_t flips = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) flips += clean[i] != adversarial[i];
  return static_cast<double>(flips) / static_cast<double>(clean.size());
}

double targeted_asr_from_predictions(const std::vector<std::size_t>& adversarial,
                                     const std::vector<std::size_t>& targets) {
  if (adversarial.size() != targets.size())
    throw std::invalid_argument("targeted asr: prediction and target counts differ");
  if (targets.empty()) throw std::invalid_argument("targeted asr: empty batch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) hits += adversarial[i] == targets[i];
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

double asr(const Classifier& target, const Tensor& x, const Tensor& x_adv) {
  if (x.shape() != x_adv.shape()) throw ShapeError("asr: clean and adversarial shapes differ");
  return asr_from_predictions(target.predict(x), target.predict(x_adv));
}

double targeted_asr(const Classifier& target, const Tensor& x_adv, const std::vector<std::size_t>& targets) {
  return targeted_asr_from_predictions(target.predict(x_adv), targets);
}

double asr(const Classifier& target, const attacks::AdvBatch& batch) {
  return batch.spec.targeted ? targeted_asr(target, batch.adversarial, batch.labels)
                             : asr(target, batch.clean, batch.adversarial);
}

namespace {

std::size_t index_of(const std::vector<std::string>& names, const std::string& name, const char* what) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::out_of_range(std::string("asr matrix: no ") + what + " '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

}  // namespace

std::size_t AsrMatrix::surrogate_index(const std::string& name) const {
  return index_of(surrogates, name, "surrogate");
}

std::size_t AsrMatrix::target_index(const std::string& name) const { return index_of(targets, name, "target"); }

double AsrMatrix::at(const std::string& surrogate, const std::string& target) const {
  return values.at(surrogate_index(surrogate)).at(target_index(target));
}

RelativeTransferAsr relative_transfer_asr(double white_box, std::span<const double> transfer) {
  if (transfer.empty()) throw std::invalid_argument("relative transfer asr: no transfer targets");
  if (!(white_box > 0.0)) return {};
  double total = 0.0;
  for (double a : transfer) total += a / white_box;
  return {total / static_cast<double>(transfer.size())};
}

RelativeTransferAsr relative_transfer_asr(const AsrMatrix& matrix, const std::string& surrogate) {
  const auto& row = matrix.values.at(matrix.surrogate_index(surrogate));
  std::vector<double> transfer;
  for (std::size_t l = 0; l < matrix.targets.size(); ++l) {
    const auto& name = matrix.targets[l];
    if (std::find(matrix.surrogates.begin(), matrix.surrogates.end(), name) == matrix.surrogates.end())
      transfer.push_back(row[l]);
  }
  return relative_transfer_asr(matrix.white_box(surrogate), transfer);
}

AsrMatrix build_asr_matrix(std::size_t task, const std::string& attack,
                           const std::vector<NamedModel>& surrogates, const std::vector<NamedModel>& targets,
                           const std::map<std::string, attacks::AdvBatch>& batches) {
  AsrMatrix m;
  m.task = task;
  m.attack = attack;
  for (const auto& t : targets) {
    if (!t.model) throw std::invalid_argument("asr matrix: missing checkpoint for target '" + t.name + "'");
    m.targets.push_back(t.name);
  }
  for (const auto& s : surrogates) {
    const auto it = batches.find(s.name);
    if (it == batches.end())
      throw std::invalid_argument("asr matrix: no adversarial batch for surrogate '" + s.name + "'");
    m.surrogates.push_back(s.name);
    std::vector<double> row;
    for (const auto& t : targets) row.push_back(asr(*t.model, it->second));
    m.values.push_back(std::move(row));
  }
  for (const auto& s : m.surrogates) m.target_index(s);  // surrogates must also be targets
  return m;
}

std::string to_csv(const AsrMatrix& matrix) {
  std::string out = "surrogate";
  for (const auto& t : matrix.targets) out += "," + t;
  out += ",Rbar\n";
  for (std::size_t s = 0; s < matrix.surrogates.size(); ++s) {
    out += matrix.surrogates[s];
    for (double v : matrix.values[s]) out += "," + format_double(v);
    const auto r = relative_transfer_asr(matrix, matrix.surrogates[s]);
    out += "," + (r.defined() ? format_double(*r.value) : std::string("undefined")) + "\n";
  }
  return out;
}

}  // namespace mxfer::evaluation
