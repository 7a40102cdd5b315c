#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sipmlab {

// Mass allowed to be dropped when a distribution is truncated internally.
// Kept two decades below the 1e-9 normalization contract so that several
// chained operations still land inside it.
inline constexpr double kTailMass = 1e-12;

// Loosest acceptable normalization defect of any exposed distribution.
inline constexpr double kNormTolerance = 1e-9;

/// Finite pmf over photon / avalanche counts n = 0..n_max().
class PhotonDistribution {
 public:
  PhotonDistribution() : probs_{1.0} {}

  explicit PhotonDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw std::invalid_argument("PhotonDistribution: empty pmf");
    check();
  }

  static PhotonDistribution point_mass(int n) {
    std::vector<double> p(static_cast<std::size_t>(n) + 1, 0.0);
    p.back() = 1.0;
    return PhotonDistribution(std::move(p));
  }

  const std::vector<double>& probs() const { return probs_; }
  int n_max() const { return static_cast<int>(probs_.size()) - 1; }
  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t n) const { return n < probs_.size() ? probs_[n] : 0.0; }

  double sum() const {
    double s = 0.0;
    for (double p : probs_) s += p;
    return s;
  }

  double mean() const {
    double m = 0.0;
    for (std::size_t n = 0; n < probs_.size(); ++n) m += static_cast<double>(n) * probs_[n];
    return m;
  }

  double variance() const {
    const double m = mean();
    double s = 0.0;
    for (std::size_t n = 0; n < probs_.size(); ++n) {
      const double d = static_cast<double>(n) - m;
      s += d * d * probs_[n];
    }
    return s;
  }

  /// Drop trailing entries whose cumulative mass is below `tail`.
  void truncate_tail(double tail = kTailMass) {
    double cut = 0.0;
    std::size_t keep = probs_.size();
    while (keep > 1 && cut + probs_[keep - 1] <= tail) {
      cut += probs_[keep - 1];
      --keep;
    }
    probs_.resize(keep);
  }

 private:
  void check() const {
    double s = 0.0;
    for (double p : probs_) {
      if (!(p >= -1e-15) || !(p <= 1.0 + 1e-12) || !std::isfinite(p))
        throw std::invalid_argument("PhotonDistribution: entry outside [0,1]");
      s += p;
    }
    if (std::fabs(s - 1.0) > kNormTolerance)
      throw std::invalid_argument("PhotonDistribution: pmf sums to " + std::to_string(s) +
                                  ", outside the 1e-9 normalization tolerance");
  }

  std::vector<double> probs_;
};

inline double total_variation(const PhotonDistribution& a, const PhotonDistribution& b) {
  const std::size_t n = std::max(a.size(), b.size());
  double tv = 0.0;
  for (std::size_t k = 0; k < n; ++k) tv += std::fabs(a[k] - b[k]);
  return 0.5 * tv;
}

}  // namespace sipmlab
