#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "sipmlab/rng.hpp"

namespace sipmlab {

template <typename T>
double sample_mean(const std::vector<T>& v) {
  if (v.empty()) throw std::invalid_argument("sample_mean: empty input");
  double s = 0.0;
  for (const T& x : v) s += static_cast<double>(x);
  return s / static_cast<double>(v.size());
}

/// Unbiased (n-1) sample variance.
template <typename T>
double sample_variance(const std::vector<T>& v) {
  if (v.size() < 2) throw std::invalid_argument("sample_variance: need at least 2 values");
  const double m = sample_mean(v);
  double s = 0.0;
  for (const T& x : v) {
    const double d = static_cast<double>(x) - m;
    s += d * d;
  }
  return s / static_cast<double>(v.size() - 1);
}

template <typename T>
double sample_median(std::vector<T> v) {
  if (v.empty()) throw std::invalid_argument("sample_median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return static_cast<double>(v[n / 2]);
  return 0.5 * (static_cast<double>(v[n / 2 - 1]) + static_cast<double>(v[n / 2]));
}

template <typename T>
double sample_skewness(const std::vector<T>& v) {
  if (v.size() < 3) throw std::invalid_argument("sample_skewness: need at least 3 values");
  const double m = sample_mean(v);
  double s2 = 0.0, s3 = 0.0;
  for (const T& x : v) {
    const double d = static_cast<double>(x) - m;
    s2 += d * d;
    s3 += d * d * d;
  }
  const double n = static_cast<double>(v.size());
  s2 /= n;
  s3 /= n;
  if (s2 <= 0.0) return 0.0;
  return s3 / std::pow(s2, 1.5);
}

template <typename T, typename U>
double pearson_correlation(const std::vector<T>& a, const std::vector<U>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("pearson_correlation: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("pearson_correlation: need at least 2 pairs");
  const double ma = sample_mean(a);
  const double mb = sample_mean(b);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = static_cast<double>(a[i]) - ma;
    const double db = static_cast<double>(b[i]) - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa <= 0.0 || sbb <= 0.0)
    throw std::invalid_argument("pearson_correlation: zero-variance input");
  return sab / std::sqrt(saa * sbb);
}

/// Standard deviation of `statistic` under nonparametric resampling.
/// 200 resamples keeps the error-on-error near 5%.
template <typename T>
double bootstrap_sigma(const std::vector<T>& data,
                       const std::function<double(const std::vector<T>&)>& statistic,
                       int n_resamples = 200, std::uint64_t seed = 0x626f6f74ULL) {
  if (data.empty()) throw std::invalid_argument("bootstrap_sigma: empty input");
  const std::size_t n = data.size();
  std::vector<double> stats(static_cast<std::size_t>(n_resamples));
  std::vector<T> resample(n);
  for (int r = 0; r < n_resamples; ++r) {
    auto rng = substream(seed, static_cast<std::uint64_t>(r));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < n; ++i) resample[i] = data[pick(rng)];
    stats[static_cast<std::size_t>(r)] = statistic(resample);
  }
  return std::sqrt(sample_variance(stats));
}

namespace detail {

// Regularized incomplete gamma functions, series + continued fraction.
inline double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < 500; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-15) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Upper regularized incomplete gamma Q(a, x).
inline double gamma_q(double a, double x) {
  if (a <= 0.0 || x < 0.0) throw std::invalid_argument("gamma_q: bad arguments");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
  return detail::gamma_q_contfrac(a, x);
}

/// Survival function of the chi-square distribution: P(X >= chi2 | dof).
inline double chi2_survival(double chi2, double dof) {
  if (chi2 < 0.0) return 1.0;
  return gamma_q(0.5 * dof, 0.5 * chi2);
}

}  // namespace sipmlab
