#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sipmlab/parallel.hpp"
#include "sipmlab/pmf.hpp"
#include "sipmlab/rng.hpp"
#include "sipmlab/sources.hpp"

namespace sipmlab {

/// Full non-ideality parameter set of one SiPM channel.
///
/// `eps` and `mean_dc` are the per-gate effective values used by the pmf
/// algebra; `dcr_hz` is the underlying dark-count rate used when events are
/// placed in time by the waveform chain.
struct DetectorParams {
  double eta = 0.4;          // detection efficiency
  double mean_dc = 0.0;      // dark counts per gate
  double eps = 0.0;          // effective cross-talk probability
  double gamma = 1.0;        // output units per fired cell
  double gain_spread = 0.02; // per-cell multiplicative gain sigma, fraction of gamma
  double dcr_hz = 0.0;       // dark-count rate for temporal simulation
  int n_cells = 667;
  bool saturation_enabled = false;

  void validate() const {
    if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("DetectorParams: eta outside [0,1]");
    if (!(mean_dc >= 0.0)) throw std::invalid_argument("DetectorParams: mean_dc must be >= 0");
    if (!(eps >= 0.0 && eps < 0.5))
      throw std::invalid_argument(
          "DetectorParams: eps outside [0,0.5); the first-order cascade is not valid there");
    if (!(gamma > 0.0)) throw std::invalid_argument("DetectorParams: gamma must be > 0");
    if (!(gain_spread >= 0.0)) throw std::invalid_argument("DetectorParams: gain_spread must be >= 0");
    if (!(dcr_hz >= 0.0)) throw std::invalid_argument("DetectorParams: dcr_hz must be >= 0");
    if (n_cells <= 0) throw std::invalid_argument("DetectorParams: n_cells must be > 0");
  }

  std::vector<std::string> warnings() const {
    std::vector<std::string> w;
    if (eps > 0.2)
      w.push_back("detector.eps = " + std::to_string(eps) +
                  " is above 0.2; the first-order cascade underestimates higher-order cross talk");
    return w;
  }
};

/// Bernoulli detection: P_el(m) = sum_n C(n,m) eta^m (1-eta)^(n-m) P_ph(n).
inline PhotonDistribution bernoulli_detect(const PhotonDistribution& pph, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("bernoulli_detect: eta outside [0,1]");
  if (eta == 1.0) return pph;
  std::vector<double> out(pph.size(), 0.0);
  if (eta == 0.0) {
    out.assign(1, 0.0);
    out[0] = pph.sum();
    PhotonDistribution d(std::move(out));
    return d;
  }
  for (std::size_t n = 0; n < pph.size(); ++n) {
    const double pn = pph[n];
    if (pn == 0.0) continue;
    // binomial weights over m for fixed n, by recurrence
    double b = std::pow(1.0 - eta, static_cast<double>(n));
    for (std::size_t m = 0; m <= n; ++m) {
      out[m] += pn * b;
      if (m < n)
        b *= (static_cast<double>(n - m) / static_cast<double>(m + 1)) * (eta / (1.0 - eta));
    }
  }
  PhotonDistribution d(std::move(out));
  d.truncate_tail();
  return d;
}

/// Convolution with a Poisson(mean_dc) dark-count distribution.
inline PhotonDistribution add_dark_counts(const PhotonDistribution& pel, double mean_dc) {
  if (!(mean_dc >= 0.0) || !std::isfinite(mean_dc))
    throw std::invalid_argument("add_dark_counts: mean_dc must be finite and >= 0");
  if (mean_dc == 0.0) return pel;
  const PhotonDistribution dark = coherent_pmf(mean_dc);
  std::vector<double> out(pel.size() + dark.size() - 1, 0.0);
  for (std::size_t i = 0; i < pel.size(); ++i) {
    const double pi = pel[i];
    if (pi == 0.0) continue;
    for (std::size_t j = 0; j < dark.size(); ++j) out[i + j] += pi * dark[j];
  }
  PhotonDistribution d(std::move(out));
  d.truncate_tail();
  return d;
}

/// First-order cross-talk cascade:
///   P(k) = sum_l C(l, k-l) eps^(k-l) (1-eps)^(2l-k) P_in(l),
/// i.e. each of l primaries spawns at most one secondary with probability eps.
/// Output support for input support [l_min, l_max] is [l_min, 2 l_max].
inline PhotonDistribution crosstalk_cascade(const PhotonDistribution& pin, double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) throw std::invalid_argument("crosstalk_cascade: eps outside [0,1)");
  if (eps == 0.0) return pin;
  std::vector<double> out(2 * pin.size() - 1, 0.0);
  for (std::size_t l = 0; l < pin.size(); ++l) {
    const double pl = pin[l];
    if (pl == 0.0) continue;
    // secondaries s ~ Binomial(l, eps), k = l + s
    double b = std::pow(1.0 - eps, static_cast<double>(l));
    for (std::size_t s = 0; s <= l; ++s) {
      out[l + s] += pl * b;
      if (s < l)
        b *= (static_cast<double>(l - s) / static_cast<double>(s + 1)) * (eps / (1.0 - eps));
    }
  }
  PhotonDistribution d(std::move(out));
  d.truncate_tail();
  return d;
}

/// Fired-cell pmf of the full chain. The composition order is fixed:
/// efficiency, then dark counts, then the cross-talk cascade outermost, so
/// dark avalanches are cross-talk-eligible. gamma only rescales the abscissa
/// at presentation time and never touches the probabilities.
inline PhotonDistribution output_distribution(const PhotonDistribution& pph,
                                              const DetectorParams& params) {
  params.validate();
  PhotonDistribution p = bernoulli_detect(pph, params.eta);
  p = add_dark_counts(p, params.mean_dc);
  p = crosstalk_cascade(p, params.eps);
  return p;
}

/// Closed-form output moments.
struct OutputMoments {
  double mean_x = 0.0;   // <x_out> = gamma <k>
  double var_x = 0.0;    // sigma^2_{x_out}
  double mean_k = 0.0;   // (1+eps)(<m> + <m>_dc)
  double fano_x = 0.0;   // var_x / mean_x (NaN when mean_x == 0)
  double mandel_q = 0.0; // Mandel factor of the detected light
};

/// Moments of the output for photon-level input moments (pph_mean, pph_var):
///   <m> = eta <n>,  sigma^2_m = eta^2 sigma^2_n + eta(1-eta)<n>,
///   <k> = (1+eps)(<m> + <m>_dc),
///   sigma^2_x = gamma^2 [(1+eps)^2 (sigma^2_m + <m>_dc) + eps(1-eps)(<m> + <m>_dc)].
inline OutputMoments output_moments(double pph_mean, double pph_var, const DetectorParams& params) {
  params.validate();
  if (!(pph_var >= 0.0)) throw std::invalid_argument("output_moments: negative variance");
  if (!(pph_mean >= 0.0)) throw std::invalid_argument("output_moments: negative mean");
  const double m = params.eta * pph_mean;
  const double var_m = params.eta * params.eta * pph_var + params.eta * (1.0 - params.eta) * pph_mean;
  const double tot = m + params.mean_dc;
  const double e = params.eps;
  OutputMoments out;
  out.mean_k = (1.0 + e) * tot;
  out.mean_x = params.gamma * out.mean_k;
  out.var_x = params.gamma * params.gamma *
              ((1.0 + e) * (1.0 + e) * (var_m + params.mean_dc) + e * (1.0 - e) * tot);
  out.fano_x = out.mean_x > 0.0 ? out.var_x / out.mean_x : std::nan("");
  out.mandel_q = tot > 0.0 ? (var_m + params.mean_dc) / tot - 1.0 : 0.0;
  return out;
}

/// Per-shot Monte Carlo of the same chain: binomial thinning, Poisson dark
/// draws, then one independent Bernoulli(eps) secondary per avalanche.
inline ShotCounts mc_detect(const ShotCounts& shots, const DetectorParams& params,
                            std::uint64_t seed, int jobs = 1) {
  params.validate();
  ShotCounts out;
  out.seed = seed;
  out.counts.resize(shots.counts.size());
  parallel_for(shots.counts.size(), jobs, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto rng = substream(seed, i);
      const int n = shots.counts[i];
      int m = 0;
      if (params.eta >= 1.0) {
        m = n;
      } else if (params.eta > 0.0 && n > 0) {
        std::binomial_distribution<int> thin(n, params.eta);
        m = thin(rng);
      }
      if (params.mean_dc > 0.0) {
        std::poisson_distribution<int> dark(params.mean_dc);
        m += dark(rng);
      }
      int k = m;
      if (params.eps > 0.0 && m > 0) {
        std::binomial_distribution<int> xt(m, params.eps);
        k += xt(rng);
      }
      if (params.saturation_enabled && k > params.n_cells) k = params.n_cells;
      out.counts[i] = k;
    }
  });
  return out;
}

}  // namespace sipmlab
