#pragma once

// Reference implementations the library is checked against. Deliberately naive and
// independent of the code under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "mxfer/tensor.hpp"

namespace mxfer::oracle {

/// Average ranks (1-based) of `v`, ties sharing the mean rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = (static_cast<double>(i + j) + 2.0) / 2.0;
    i = j + 1;
  }
  return r;
}

/// One-sided Wilcoxon p = P(W+ >= observed) by enumerating all 2^N sign assignments.
inline double wilcoxon_exact_p(const std::vector<double>& sample) {
  std::vector<double> nz, mags;
  for (double x : sample)
    if (x != 0.0) nz.push_back(x);
  for (double x : nz) mags.push_back(std::fabs(x));
  const auto ranks = average_ranks(mags);
  const std::size_t n = nz.size();
  // Doubled ranks are integers, so the comparison below is exact.
  std::vector<long> r2(n);
  long observed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    r2[i] = std::lround(2.0 * ranks[i]);
    if (nz[i] > 0) observed += r2[i];
  }
  std::uint64_t hits = 0;
  const std::uint64_t total = std::uint64_t{1} << n;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    long w = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) w += r2[i];
    if (w >= observed) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

/// One-sided Mann-Whitney p = P(U_a >= observed) over all ways to choose a's ranks.
inline double mann_whitney_exact_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> all = a;
  all.insert(all.end(), b.begin(), b.end());
  const auto ranks = average_ranks(all);
  const std::size_t n = all.size(), na = a.size();
  double observed = 0.0;
  for (std::size_t i = 0; i < na; ++i) observed += ranks[i];
  std::vector<bool> pick(n, false);
  std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(na), true);
  std::uint64_t hits = 0, total = 0;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (pick[i]) s += ranks[i];
    ++total;
    if (s >= observed - 1e-9) ++hits;
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

struct BhOracle {
  std::vector<bool> rejected;
  std::vector<double> adjusted;
};

/// Step-up definition: reject every p <= p_(k*), k* the largest k with p_(k) <= k q / m.
/// Adjusted p_(i) = min_{j >= i} m p_(j) / j, capped at 1, all by brute force.
inline BhOracle bh(const std::vector<double>& p, double q) {
  const std::size_t m = p.size();
  std::vector<double> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  double cut = -1.0;
  for (std::size_t k = 1; k <= m; ++k)
    if (sorted[k - 1] <= static_cast<double>(k) * q / static_cast<double>(m)) cut = sorted[k - 1];
  BhOracle out;
  for (double x : p) out.rejected.push_back(cut >= 0.0 && x <= cut);
  for (double x : p) {
    // Rank of x in sorted order (first occurrence gives the smallest adjusted value set).
    double best = 1.0;
    for (std::size_t j = 1; j <= m; ++j)
      if (sorted[j - 1] >= x) best = std::min(best, static_cast<double>(m) * sorted[j - 1] / static_cast<double>(j));
    out.adjusted.push_back(best);
  }
  return out;
}

inline double t_density(double x, double nu) {
  const double c = std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0) - 0.5 * std::log(nu * std::numbers::pi);
  return std::exp(c - (nu + 1.0) / 2.0 * std::log1p(x * x / nu));
}

inline double simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
                      double whole, double tol, int depth) {
  const double m = (a + b) / 2.0, lm = (a + m) / 2.0, rm = (m + b) / 2.0;
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::fabs(left + right - whole) <= 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
         simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-14) {
  const double fa = f(a), fb = f(b), fm = f((a + b) / 2.0);
  return simpson(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 60);
}

/// P(T > t) for Student t with nu degrees of freedom, by adaptive Simpson on the density.
inline double t_upper_tail(double t, double nu) {
  const double half = integrate([nu](double x) { return t_density(x, nu); }, 0.0, std::fabs(t));
  return t >= 0.0 ? 0.5 - half : 0.5 + half;
}

/// "Same" zero-padded 2-D cross-correlation of one side x side image.
inline std::vector<double> correlate2d(const std::vector<double>& img, std::size_t side,
                                       const std::vector<double>& k, std::size_t ks) {
  std::vector<double> out(side * side, 0.0);
  const long r = static_cast<long>(ks / 2);
  for (long i = 0; i < static_cast<long>(side); ++i)
    for (long j = 0; j < static_cast<long>(side); ++j) {
      double s = 0.0;
      for (long a = -r; a <= r; ++a)
        for (long b = -r; b <= r; ++b) {
          const long y = i + a, x = j + b;
          if (y < 0 || x < 0 || y >= static_cast<long>(side) || x >= static_cast<long>(side)) continue;
          s += img[static_cast<std::size_t>(y) * side + static_cast<std::size_t>(x)] *
               k[static_cast<std::size_t>(a + r) * ks + static_cast<std::size_t>(b + r)];
        }
      out[static_cast<std::size_t>(i) * side + static_cast<std::size_t>(j)] = s;
    }
  return out;
}

/// Central differences of a scalar function of a flat vector.
inline std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    x[i] = x0;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor). The floor stops near-zero gradients from
/// amplifying finite-difference rounding (about 1e-10 at h = 1e-6).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-3) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace mxfer::oracle
