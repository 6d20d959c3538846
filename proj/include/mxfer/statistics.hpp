#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mxfer::stats {

/// Sample too small, constant, or otherwise unusable for the requested test.
class DegenerateSample : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ShapiroResult {
  double w;
  double p;
};
/// Royston's AS R94 approximation; 3 <= n <= 5000.
ShapiroResult shapiro_wilk(std::span<const double> sample);

struct TTestResult {
  double t;
  double p;  // one-sided, alternative mean > 0
  std::size_t n;
};
TTestResult t_test_one_sample(std::span<const double> sample);

struct WilcoxonResult {
  double w;  // sum of positive ranks
  double p;  // one-sided, alternative median > 0
  double z;  // normal-approximation statistic (continuity and tie corrected)
  std::size_t n;  // nonzero differences
  bool exact;
};
/// Zeros dropped, ties get average ranks. Exact p by enumeration for n <= 20.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> sample);
constexpr std::size_t kWilcoxonExactLimit = 20;

struct MannWhitneyResult {
  double u;  // U of sample a
  double p;  // one-sided, alternative a > b
  bool exact;
};
/// Exact enumeration when there are no ties and both samples have at most
/// kMannWhitneyExactLimit values, otherwise the tie-corrected normal approximation.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b);
constexpr std::size_t kMannWhitneyExactLimit = 10;

struct BhResult {
  std::vector<double> adjusted;
  std::vector<bool> rejected;
};
BhResult bh_correct(std::span<const double> p_values, double q = 0.05);

double mean(std::span<const double> sample);
/// Sample standard deviation (n - 1 denominator).
double stddev(std::span<const double> sample);
double cohens_d(std::span<const double> sample);
double wilcoxon_r(double z, std::size_t n);

enum class Magnitude { Negligible, Small, Medium, Large };
std::string to_string(Magnitude m);
Magnitude d_magnitude(double d);
Magnitude r_magnitude(double r);

/// Upper tail of the standard normal.
double normal_sf(double z);

struct DeltaSample {
  std::string label;
  std::vector<double> values;
};

enum class TestUsed { TTest, Wilcoxon, None };
std::string to_string(TestUsed t);

struct StatTestResult {
  std::string label;
  std::size_t n = 0;
  /// Empty when Shapiro-Wilk is undefined for the sample (n < 3 or constant).
  std::optional<double> shapiro_p;
  bool normal = false;
  TestUsed test_used = TestUsed::None;
  double statistic = 0.0;
  double one_tailed_p = 1.0;
  double bh_p = 1.0;
  bool rejected = false;
  double effect_size = 0.0;
  Magnitude magnitude = Magnitude::Negligible;
};

/// Normality gate at alpha, then t-test or Wilcoxon, then BH at q across the group.
/// An all-zero sample gets TestUsed::None with p = 1.
std::vector<StatTestResult> run_procedure(const std::vector<DeltaSample>& group, double alpha = 0.05,
                                          double q = 0.05);

/// Columns: sample, n, shapiro_p, normal, test, statistic, one_tailed_p, bh_p, rejected, effect_size, magnitude.
std::string to_csv(const std::vector<StatTestResult>& results);

}  // namespace mxfer::stats
