#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "mxfer/evaluation.hpp"
#include "mxfer/statistics.hpp"

namespace mxfer::hypotheses {

/// Surrogate row names used throughout the ASR matrices.
inline const std::string kPretrained = "pretrained";
inline const std::string kFinetuned = "finetuned";

enum class SurrogateFilter { All, Pretrained, Finetuned };
std::string to_string(SurrogateFilter f);
SurrogateFilter parse_surrogate_filter(const std::string& s);

/// One pooled sample of paired differences [A]_{s,minuend} - [A]_{s,subtrahend}, in
/// percentage points, over tasks x attacks x the filtered surrogates x pairs.
struct SampleSpec {
  std::string label;
  std::vector<std::pair<std::string, std::string>> pairs;
  SurrogateFilter surrogates = SurrogateFilter::All;
  std::vector<std::string> attacks;
};

/// A hypothesis with its BH groups; each group is corrected separately.
struct HypothesisSpec {
  std::string id;
  std::vector<std::vector<SampleSpec>> groups;

  /// Canonical text form; its SHA-256 is what the manifest registers.
  std::string canonical() const;
  std::string hash() const;
};

/// H1, H2a, H2b, H3 over the given gradient attacks (FGSM, I-FGSM, PGD, NI-FGSM, TI-FGSM).
std::vector<HypothesisSpec> default_hypotheses(const std::vector<std::string>& attacks);

class MissingCell : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

std::vector<stats::DeltaSample> build_deltas(const std::vector<evaluation::AsrMatrix>& matrices,
                                             const std::vector<SampleSpec>& samples);

struct HypothesisReport {
  std::string id;
  std::vector<std::vector<stats::StatTestResult>> groups;
  std::vector<std::vector<stats::DeltaSample>> samples;
};

/// Unregistered hypothesis spec (not committed to the manifest before results existed).
class UnregisteredHypothesis : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Refuses any spec whose hash is not in `registered`.
std::vector<HypothesisReport> run_hypotheses(const std::vector<evaluation::AsrMatrix>& matrices,
                                             const std::vector<HypothesisSpec>& specs,
                                             const std::set<std::string>& registered, double alpha = 0.05,
                                             double q = 0.05);

std::string to_markdown(const std::vector<HypothesisReport>& reports);

struct ModelGradientScores {
  std::string name;
  /// Per probe, for probes where every gradient is nonzero.
  std::vector<double> center;
  /// Cosine between this model's gradient and the surrogate's, per probe.
  std::vector<double> alignment;
  double mean_center() const;
  double mean_alignment() const;
};

struct GradientReport {
  std::vector<ModelGradientScores> models;
  std::size_t probes = 0;
  std::size_t skipped = 0;
  /// WA vs pooled others, one-sided WA > others.
  std::optional<stats::MannWhitneyResult> center_test;
  std::optional<stats::MannWhitneyResult> alignment_test;
};

/// c(M) per probe = <g_M / |g_M|, gbar / |gbar|>, gbar the mean of the normalized
/// fine-tuned gradients. Alignment is measured against `surrogate`. The WA-vs-others
/// tests run when a model named "WA" and at least one other model are present.
GradientReport center_score(const std::vector<evaluation::NamedModel>& merged,
                            const std::vector<const Classifier*>& finetuned, const Classifier& surrogate,
                            const Tensor& probes, const std::vector<std::size_t>& labels);

struct LemmaReport {
  std::size_t trials = 0;
  std::size_t probes = 0;
  std::size_t violations = 0;
  /// Largest |F(wbar/|wbar|) - |wbar||.
  double max_value_error = 0.0;
  bool passed() const { return violations == 0 && max_value_error <= 1e-12; }
};

/// For random nonzero v_1..v_T, F(x) = mean_t <x, v_t/|v_t|> over unit x is maximized by
/// wbar/|wbar| with maximum |wbar|. Checks every random unit probe against that bound.
LemmaReport verify_cosine_lemma(std::uint64_t seed, std::size_t dimension, std::size_t tasks,
                                std::size_t trials, std::size_t probes_per_trial);

}  // namespace mxfer::hypotheses
