#include "mxfer/statistics.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>

#include "mxfer/format.hpp"

namespace mxfer::stats {

namespace {

double poly(std::span<const double> c, double x) {
  double r = 0.0;
  for (std::size_t i = c.size(); i-- > 0;) r = r * x + c[i];
  return r;
}

double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

void require_finite(std::span<const double> s, const char* what) {
  for (double v : s)
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite value");
}

// Average ranks (1-based) of `v`, plus the tie term sum(t^3 - t).
std::vector<double> average_ranks(const std::vector<double>& v, double* tie_term) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  double ties = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    const auto t = static_cast<double>(j - i + 1);
    ties += t * t * t - t;
    i = j + 1;
  }
  if (tie_term) *tie_term = ties;
  return ranks;
}

}  // namespace

double normal_sf(double z) {
  if (std::isinf(z)) return z > 0 ? 0.0 : 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(), z));
}

ShapiroResult shapiro_wilk(std::span<const double> sample) {
  const std::size_t n = sample.size();
  if (n < 3) throw DegenerateSample("shapiro_wilk: need at least 3 values, got " + std::to_string(n));
  if (n > 5000) throw DegenerateSample("shapiro_wilk: at most 5000 values supported");
  require_finite(sample, "shapiro_wilk");
  std::vector<double> x(sample.begin(), sample.end());
  std::sort(x.begin(), x.end());
  const double range = x.back() - x.front();
  if (!(range > 0.0)) throw DegenerateSample("shapiro_wilk: constant sample");

  static constexpr double g[] = {-2.273, 0.459};
  static constexpr double c1[] = {0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056};
  static constexpr double c2[] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
  static constexpr double c3[] = {0.544, -0.39978, 0.025054, -6.714e-4};
  static constexpr double c4[] = {1.3822, -0.77857, 0.062767, -0.0020322};
  static constexpr double c5[] = {-1.5861, -0.31082, -0.083751, 0.0038915};
  static constexpr double c6[] = {-0.4803, -0.082676, 0.0030302};

  const auto an = static_cast<double>(n);
  const std::size_t half = n / 2;
  std::vector<double> a(half);
  if (n == 3) {
    a[0] = std::sqrt(0.5);
  } else {
    std::vector<double> m(half);
    double summ2 = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
      m[i] = normal_quantile((static_cast<double>(i + 1) - 0.375) / (an + 0.25));
      summ2 += m[i] * m[i];
    }
    summ2 *= 2.0;
    const double ssumm2 = std::sqrt(summ2), rsn = 1.0 / std::sqrt(an);
    const double a1 = poly(c1, rsn) - m[0] / ssumm2;
    std::size_t first;
    double fac;
    if (n > 5) {
      const double a2 = -m[1] / ssumm2 + poly(c2, rsn);
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
      a[1] = a2;
      first = 2;
    } else {
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1));
      first = 1;
    }
    a[0] = a1;
    for (std::size_t i = first; i < half; ++i) a[i] = -m[i] / fac;
  }

  // Scale by the range for numerical stability.
  double mu = 0.0;
  for (double& v : x) {
    v /= range;
    mu += v;
  }
  mu /= an;
  double ssq = 0.0, num = 0.0;
  for (double v : x) ssq += (v - mu) * (v - mu);
  for (std::size_t i = 0; i < half; ++i) num += a[i] * (x[n - 1 - i] - x[i]);
  double w = std::min(1.0, num * num / ssq);

  if (n == 3) {
    const double p = 6.0 / M_PI * (std::asin(std::sqrt(w)) - M_PI / 3.0);
    return {w, std::clamp(p, 0.0, 1.0)};
  }
  double y = std::log(1.0 - w);
  double mean_, sd;
  if (n <= 11) {
    const double gamma = poly(g, an);
    if (y >= gamma) return {w, 1e-99};
    y = -std::log(gamma - y);
    mean_ = poly(c3, an);
    sd = std::exp(poly(c4, an));
  } else {
    const double lx = std::log(an);
    mean_ = poly(c5, lx);
    sd = std::exp(poly(c6, lx));
  }
  return {w, normal_sf((y - mean_) / sd)};
}

double mean(std::span<const double> s) {
  if (s.empty()) throw DegenerateSample("mean: empty sample");
  return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
}

double stddev(std::span<const double> s) {
  if (s.size() < 2) throw DegenerateSample("stddev: need at least 2 values");
  const double mu = mean(s);
  double ss = 0.0;
  for (double v : s) ss += (v - mu) * (v - mu);
  return std::sqrt(ss / static_cast<double>(s.size() - 1));
}

TTestResult t_test_one_sample(std::span<const double> sample) {
  require_finite(sample, "t_test");
  if (sample.size() < 2) throw DegenerateSample("t_test: need at least 2 values");
  const double sd = stddev(sample);
  if (!(sd > 0.0)) throw DegenerateSample("t_test: zero variance");
  const auto n = static_cast<double>(sample.size());
  const double t = mean(sample) / (sd / std::sqrt(n));
  const boost::math::students_t_distribution<double> dist(n - 1.0);
  return {t, boost::math::cdf(boost::math::complement(dist, t)), sample.size()};
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> sample) {
  require_finite(sample, "wilcoxon");
  std::vector<double> nz;
  for (double v : sample)
    if (v != 0.0) nz.push_back(v);
  if (nz.empty()) throw DegenerateSample("wilcoxon: all differences are zero");
  const std::size_t n = nz.size();
  std::vector<double> mags(n);
  for (std::size_t i = 0; i < n; ++i) mags[i] = std::abs(nz[i]);
  double ties = 0.0;
  const auto ranks = average_ranks(mags, &ties);
  double w = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (nz[i] > 0.0) w += ranks[i];

  const auto an = static_cast<double>(n);
  const double mu = an * (an + 1.0) / 4.0;
  const double var = an * (an + 1.0) * (2.0 * an + 1.0) / 24.0 - ties / 48.0;
  const double z = var > 0.0 ? (w - mu - 0.5) / std::sqrt(var) : 0.0;

  WilcoxonResult r{w, 0.0, z, n, n <= kWilcoxonExactLimit};
  if (r.exact) {
    // Doubled ranks are integers; count sign assignments with positive-rank sum >= w.
    std::vector<std::size_t> doubled(n);
    std::size_t total = 0;
    for (std::size_t i = 0; i < n; ++i) total += doubled[i] = static_cast<std::size_t>(std::lround(2.0 * ranks[i]));
    std::vector<double> count(total + 1, 0.0);
    count[0] = 1.0;
    for (std::size_t d : doubled)
      for (std::size_t s = total; s + 1 > d; --s) count[s] += count[s - d];
    const auto w2 = static_cast<std::size_t>(std::lround(2.0 * w));
    double hits = 0.0;
    for (std::size_t s = w2; s <= total; ++s) hits += count[s];
    r.p = hits / std::ldexp(1.0, static_cast<int>(n));
  } else {
    r.p = var > 0.0 ? normal_sf(z) : 1.0;
  }
  return r;
}

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DegenerateSample("mann_whitney_u: both samples must be nonempty");
  require_finite(a, "mann_whitney_u");
  require_finite(b, "mann_whitney_u");
  std::vector<double> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  double ties = 0.0;
  const auto ranks = average_ranks(all, &ties);
  const std::size_t na = a.size(), nb = b.size(), N = na + nb;
  double ra = 0.0;
  for (std::size_t i = 0; i < na; ++i) ra += ranks[i];
  const double u = ra - static_cast<double>(na * (na + 1)) / 2.0;

  MannWhitneyResult r{u, 1.0, ties == 0.0 && na <= kMannWhitneyExactLimit && nb <= kMannWhitneyExactLimit};
  if (r.exact) {
    // ways[k][s]: subsets of size k of {1..N} with rank sum s.
    const std::size_t max_sum = N * (N + 1) / 2;
    std::vector<std::vector<double>> ways(na + 1, std::vector<double>(max_sum + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t rank = 1; rank <= N; ++rank)
      for (std::size_t k = std::min(na, rank); k >= 1; --k)
        for (std::size_t s = max_sum; s >= rank; --s) ways[k][s] += ways[k - 1][s - rank];
    const auto target = static_cast<std::size_t>(std::lround(ra));
    double hits = 0.0, total = 0.0;
    for (std::size_t s = 0; s <= max_sum; ++s) {
      total += ways[na][s];
      if (s >= target) hits += ways[na][s];
    }
    r.p = hits / total;
  } else {
    const double fa = static_cast<double>(na), fb = static_cast<double>(nb), fn = static_cast<double>(N);
    const double var = fa * fb / 12.0 * ((fn + 1.0) - ties / (fn * (fn - 1.0)));
    r.p = var > 0.0 ? normal_sf((u - fa * fb / 2.0 - 0.5) / std::sqrt(var)) : 1.0;
  }
  return r;
}

BhResult bh_correct(std::span<const double> p, double q) {
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("bh_correct: p values must lie in [0, 1]");
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  BhResult r{std::vector<double>(m), std::vector<bool>(m, false)};
  double running = 1.0;
  for (std::size_t k = m; k-- > 0;) {
    const std::size_t i = order[k];
    running = std::min(running, static_cast<double>(m) * p[i] / static_cast<double>(k + 1));
    // m p / m can round one ulp below p.
    r.adjusted[i] = std::max(p[i], std::min(1.0, running));
  }
  // Step-up: reject the k smallest where k is the largest rank with p_(k) <= k q / m.
  std::size_t cutoff = 0;
  for (std::size_t k = 0; k < m; ++k)
    if (p[order[k]] <= static_cast<double>(k + 1) * q / static_cast<double>(m)) cutoff = k + 1;
  for (std::size_t k = 0; k < cutoff; ++k) r.rejected[order[k]] = true;
  return r;
}

double cohens_d(std::span<const double> sample) {
  const double sd = stddev(sample);
  if (!(sd > 0.0)) throw DegenerateSample("cohens_d: zero standard deviation");
  return mean(sample) / sd;
}

double wilcoxon_r(double z, std::size_t n) {
  if (n == 0) throw DegenerateSample("wilcoxon_r: N must be >= 1");
  return z / std::sqrt(static_cast<double>(n));
}

std::string to_string(Magnitude m) {
  switch (m) {
    case Magnitude::Negligible: return "negligible";
    case Magnitude::Small: return "small";
    case Magnitude::Medium: return "medium";
    case Magnitude::Large: return "large";
  }
  return "?";
}

namespace {
Magnitude classify(double v, double small, double medium, double large) {
  v = std::abs(v);
  if (v >= large) return Magnitude::Large;
  if (v >= medium) return Magnitude::Medium;
  if (v >= small) return Magnitude::Small;
  return Magnitude::Negligible;
}
}  // namespace

Magnitude d_magnitude(double d) { return classify(d, 0.1, 0.5, 0.8); }
Magnitude r_magnitude(double r) { return classify(r, 0.1, 0.3, 0.5); }

std::string to_string(TestUsed t) {
  switch (t) {
    case TestUsed::TTest: return "t-test";
    case TestUsed::Wilcoxon: return "Wilcoxon";
    case TestUsed::None: return "none";
  }
  return "?";
}

std::vector<StatTestResult> run_procedure(const std::vector<DeltaSample>& group, double alpha, double q) {
  if (group.empty()) throw std::invalid_argument("run_procedure: empty group");
  std::vector<StatTestResult> out;
  for (const auto& s : group) {
    if (s.values.empty()) throw DegenerateSample("run_procedure: sample '" + s.label + "' is empty");
    StatTestResult r;
    r.label = s.label;
    r.n = s.values.size();
    try {
      r.shapiro_p = shapiro_wilk(s.values).p;
    } catch (const DegenerateSample&) {
    }
    r.normal = r.shapiro_p && *r.shapiro_p >= alpha;
    if (r.normal) {
      const auto t = t_test_one_sample(s.values);
      r.test_used = TestUsed::TTest;
      r.statistic = t.t;
      r.one_tailed_p = t.p;
      r.effect_size = cohens_d(s.values);
      r.magnitude = d_magnitude(r.effect_size);
    } else if (std::any_of(s.values.begin(), s.values.end(), [](double v) { return v != 0.0; })) {
      const auto w = wilcoxon_signed_rank(s.values);
      r.test_used = TestUsed::Wilcoxon;
      r.statistic = w.w;
      r.one_tailed_p = w.p;
      r.effect_size = wilcoxon_r(w.z, w.n);
      r.magnitude = r_magnitude(r.effect_size);
    }
    out.push_back(r);
  }
  std::vector<double> ps;
  for (const auto& r : out) ps.push_back(r.one_tailed_p);
  const auto bh = bh_correct(ps, q);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].bh_p = bh.adjusted[i];
    out[i].rejected = bh.rejected[i];
  }
  return out;
}

std::string to_csv(const std::vector<StatTestResult>& results) {
  std::string out = "sample,n,shapiro_p,normal,test,statistic,one_tailed_p,bh_p,rejected,effect_size,magnitude\n";
  for (const auto& r : results) {
    out += csv_field(r.label) + "," + std::to_string(r.n) + "," +
           (r.shapiro_p ? format_double(*r.shapiro_p) : std::string("undefined")) + "," +
           (r.normal ? "true" : "false") + "," + to_string(r.test_used) + "," + format_double(r.statistic) + "," +
           format_double(r.one_tailed_p) + "," + format_double(r.bh_p) + "," + (r.rejected ? "true" : "false") +
           "," + format_double(r.effect_size) + "," + to_string(r.magnitude) + "\n";
  }
  return out;
}

}  // namespace mxfer::stats
