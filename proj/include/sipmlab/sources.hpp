#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sipmlab/parallel.hpp"
#include "sipmlab/pmf.hpp"
#include "sipmlab/rng.hpp"

namespace sipmlab {

inline constexpr int kMaxAutoSupport = 8192;

enum class SourceKind { kCoherent, kThermal };

inline const char* to_string(SourceKind k) {
  return k == SourceKind::kCoherent ? "coherent" : "thermal";
}

/// Classical light source: Poissonian, or multimode thermal with `modes`
/// equally populated modes. `modes` may be non-integer.
struct SourceSpec {
  SourceKind kind = SourceKind::kCoherent;
  double mean_photons = 1.0;
  double modes = 1.0;  // ignored for coherent light

  void validate() const {
    if (!std::isfinite(mean_photons) || mean_photons < 0.0)
      throw std::invalid_argument("SourceSpec: mean_photons must be finite and >= 0");
    if (kind == SourceKind::kThermal && (!std::isfinite(modes) || modes < 1.0))
      throw std::invalid_argument("SourceSpec: modes must be finite and >= 1");
  }
};

namespace detail {

inline PhotonDistribution finalize_pmf(std::vector<double> probs, int requested_n_max) {
  if (requested_n_max >= 0) {
    double tail = 1.0;
    for (double p : probs) tail -= p;
    if (tail > kNormTolerance)
      throw std::invalid_argument("pmf: n_max=" + std::to_string(requested_n_max) +
                                  " leaves tail mass " + std::to_string(tail) +
                                  " above the 1e-9 bound");
  }
  PhotonDistribution d(std::move(probs));
  if (requested_n_max < 0) d.truncate_tail();
  return d;
}

}  // namespace detail

/// Poisson pmf. With n_max < 0 the support is chosen automatically so the
/// dropped tail is below kTailMass; an explicit n_max is rejected if its tail
/// mass exceeds the 1e-9 normalization bound.
inline PhotonDistribution coherent_pmf(double mean, int n_max = -1) {
  if (!std::isfinite(mean) || mean < 0.0)
    throw std::invalid_argument("coherent_pmf: mean must be finite and >= 0");
  std::vector<double> probs;
  double p = std::exp(-mean);
  double csum = p;
  probs.push_back(p);
  const int limit = n_max >= 0 ? n_max : kMaxAutoSupport;
  for (int n = 1; n <= limit; ++n) {
    p *= mean / static_cast<double>(n);
    probs.push_back(p);
    csum += p;
    if (n_max < 0 && csum >= 1.0 - kTailMass && static_cast<double>(n) > mean) break;
  }
  if (n_max < 0 && csum < 1.0 - kTailMass)
    throw std::invalid_argument("coherent_pmf: support cap reached before tail bound");
  return detail::finalize_pmf(std::move(probs), n_max);
}

/// Multimode thermal (negative binomial) pmf,
///   P(m) = Gamma(m+mu)/(m! Gamma(mu)) (1+mean/mu)^-mu (1+mu/mean)^-m,
/// with non-integer mu handled through the Gamma-function recurrence.
inline PhotonDistribution thermal_pmf(double mean, double modes, int n_max = -1) {
  if (!std::isfinite(mean) || mean < 0.0)
    throw std::invalid_argument("thermal_pmf: mean must be finite and >= 0");
  if (!std::isfinite(modes) || modes < 1.0)
    throw std::invalid_argument("thermal_pmf: modes must be finite and >= 1");
  if (mean == 0.0) {
    std::vector<double> v{1.0};
    return detail::finalize_pmf(std::move(v), n_max);
  }
  std::vector<double> probs;
  // P(0) = (1+mean/mu)^-mu, then P(m+1) = P(m) (m+mu)/(m+1) mean/(mean+mu).
  double p = std::exp(-modes * std::log1p(mean / modes));
  const double step = mean / (mean + modes);
  double csum = p;
  probs.push_back(p);
  const int limit = n_max >= 0 ? n_max : kMaxAutoSupport;
  for (int m = 1; m <= limit; ++m) {
    p *= (static_cast<double>(m - 1) + modes) / static_cast<double>(m) * step;
    probs.push_back(p);
    csum += p;
    if (n_max < 0 && csum >= 1.0 - kTailMass && static_cast<double>(m) > mean) break;
  }
  if (n_max < 0 && csum < 1.0 - kTailMass)
    throw std::invalid_argument("thermal_pmf: support cap reached before tail bound");
  return detail::finalize_pmf(std::move(probs), n_max);
}

inline PhotonDistribution source_pmf(const SourceSpec& spec, int n_max = -1) {
  spec.validate();
  return spec.kind == SourceKind::kCoherent ? coherent_pmf(spec.mean_photons, n_max)
                                            : thermal_pmf(spec.mean_photons, spec.modes, n_max);
}

/// Per-trial photon (or avalanche) counts plus the seed they were drawn with.
struct ShotCounts {
  std::vector<int> counts;
  std::uint64_t seed = 0;

  double mean() const {
    if (counts.empty()) return 0.0;
    double s = 0.0;
    for (int c : counts) s += c;
    return s / static_cast<double>(counts.size());
  }
};

/// i.i.d. draws from the source pmf; trial i uses substream(seed, i), so the
/// output is reproducible and independent of how trials are batched.
/// Thermal light is drawn as Poisson with Gamma-distributed intensity
/// (shape mu, scale mean/mu), exact for any real mu >= 1.
inline ShotCounts sample_shots(const SourceSpec& spec, std::int64_t trials, std::uint64_t seed,
                               int jobs = 1) {
  spec.validate();
  if (trials < 1) throw std::invalid_argument("sample_shots: trials must be >= 1");
  ShotCounts out;
  out.seed = seed;
  out.counts.resize(static_cast<std::size_t>(trials));
  parallel_for(static_cast<std::size_t>(trials), jobs, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto rng = substream(seed, i);
      if (spec.mean_photons == 0.0) {
        out.counts[i] = 0;
      } else if (spec.kind == SourceKind::kCoherent) {
        std::poisson_distribution<int> poi(spec.mean_photons);
        out.counts[i] = poi(rng);
      } else {
        std::gamma_distribution<double> gam(spec.modes, spec.mean_photons / spec.modes);
        const double intensity = gam(rng);
        if (intensity <= 0.0) {
          out.counts[i] = 0;
        } else {
          std::poisson_distribution<int> poi(intensity);
          out.counts[i] = poi(rng);
        }
      }
    }
  });
  return out;
}

/// Independent binomial thinning of each shot, the ND-filter-wheel analogue.
/// Preserves Poisson and multimode-thermal statistics exactly.
inline ShotCounts thin_shots(const ShotCounts& shots, double survival, std::uint64_t seed,
                             int jobs = 1) {
  if (!(survival >= 0.0 && survival <= 1.0))
    throw std::invalid_argument("thin_shots: survival probability outside [0,1]");
  ShotCounts out;
  out.seed = seed;
  out.counts.resize(shots.counts.size());
  parallel_for(shots.counts.size(), jobs, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const int n = shots.counts[i];
      if (survival >= 1.0 || n == 0) {
        out.counts[i] = survival >= 1.0 ? n : 0;
      } else if (survival <= 0.0) {
        out.counts[i] = 0;
      } else {
        auto rng = substream(seed, i);
        std::binomial_distribution<int> bin(n, survival);
        out.counts[i] = bin(rng);
      }
    }
  });
  return out;
}

/// Route each photon of each shot to arm 1 with probability `transmittance`.
/// The two arms sum to the input shot-by-shot.
inline std::pair<ShotCounts, ShotCounts> split_beam(const ShotCounts& shots, double transmittance,
                                                    std::uint64_t seed) {
  if (!(transmittance >= 0.0 && transmittance <= 1.0))
    throw std::invalid_argument("split_beam: transmittance must be in [0,1]");
  ShotCounts arm1, arm2;
  arm1.seed = seed;
  arm2.seed = seed;
  arm1.counts.resize(shots.counts.size());
  arm2.counts.resize(shots.counts.size());
  for (std::size_t i = 0; i < shots.counts.size(); ++i) {
    const int n = shots.counts[i];
    if (n < 0) throw std::invalid_argument("split_beam: negative count");
    int to1 = 0;
    if (transmittance >= 1.0) {
      to1 = n;
    } else if (transmittance > 0.0 && n > 0) {
      auto rng = substream(seed, i);
      std::binomial_distribution<int> bin(n, transmittance);
      to1 = bin(rng);
    }
    arm1.counts[i] = to1;
    arm2.counts[i] = n - to1;
  }
  return {std::move(arm1), std::move(arm2)};
}

/// Single-column CSV with a header comment naming the seed and source spec.
inline void write_shots_csv(std::ostream& os, const ShotCounts& shots, const SourceSpec& spec) {
  os << "# seed=" << shots.seed << " kind=" << to_string(spec.kind)
     << " mean_photons=" << spec.mean_photons;
  if (spec.kind == SourceKind::kThermal) os << " modes=" << spec.modes;
  os << "\ncount\n";
  for (int c : shots.counts) os << c << "\n";
}

inline ShotCounts read_shots_csv(std::istream& is) {
  ShotCounts shots;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("seed=");
      if (pos != std::string::npos) shots.seed = std::stoull(line.substr(pos + 5));
      continue;
    }
    if (line == "count") continue;
    shots.counts.push_back(std::stoi(line));
  }
  return shots;
}

}  // namespace sipmlab
