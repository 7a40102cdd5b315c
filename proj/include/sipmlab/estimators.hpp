#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sipmlab/fit.hpp"
#include "sipmlab/histogram.hpp"
#include "sipmlab/pmf.hpp"
#include "sipmlab/sources.hpp"
#include "sipmlab/stats.hpp"

namespace sipmlab {

// ---------------------------------------------------------------------------
// Pulse-height spectroscopy
// ---------------------------------------------------------------------------

struct GaussianPeak {
  double amplitude = 0.0;
  double center = 0.0;
  double sigma = 0.0;
  double center_err = 0.0;
  double sigma_err = 0.0;

  double area(double bin_width) const {
    return amplitude * sigma * std::sqrt(2.0 * M_PI) / bin_width;
  }
};

/// Detect and fit the photon-number peaks of a pulse-height spectrum.
///
/// Candidates are local maxima of the lightly smoothed histogram that sit a
/// few Poisson sigmas above zero; candidates closer than half the spacing
/// prior to a taller one are dropped. The prior comes from the two tallest
/// candidates unless the caller supplies one. Each surviving peak is then fit
/// locally with a single Gaussian.
inline std::vector<GaussianPeak> fit_spectrum_peaks(const PulseHeightSpectrum& spec,
                                                    int max_peaks = 32,
                                                    double spacing_prior = 0.0) {
  const std::size_t nb = spec.n_bins();
  if (nb < 3) throw std::runtime_error("fit_spectrum_peaks: spectrum has too few bins");
  std::vector<double> smooth(nb, 0.0);
  for (std::size_t i = 0; i < nb; ++i) {
    double s = static_cast<double>(spec.counts[i]);
    double w = 1.0;
    if (i > 0) { s += static_cast<double>(spec.counts[i - 1]); w += 1.0; }
    if (i + 1 < nb) { s += static_cast<double>(spec.counts[i + 1]); w += 1.0; }
    smooth[i] = s / w;
  }
  double cmax = 0.0;
  for (double v : smooth) cmax = std::max(cmax, v);

  struct Candidate { std::size_t bin; double height; };
  std::vector<Candidate> cands;
  for (std::size_t i = 1; i + 1 < nb; ++i) {
    if (smooth[i] >= smooth[i - 1] && smooth[i] > smooth[i + 1]) {
      const double h = smooth[i];
      if (h >= std::max(5.0, 3.0 * std::sqrt(h)) && h >= 2e-3 * cmax)
        cands.push_back({i, h});
    }
  }
  if (cands.empty()) return {};

  std::sort(cands.begin(), cands.end(),
            [](const Candidate& a, const Candidate& b) { return a.height > b.height; });
  double prior = spacing_prior;
  if (!(prior > 0.0)) {
    if (cands.size() < 2)
      prior = spec.bin_width() * static_cast<double>(nb);  // effectively no separation cut
    else
      prior = std::fabs(spec.center(cands[0].bin) - spec.center(cands[1].bin));
  }

  std::vector<Candidate> kept;
  for (const auto& c : cands) {
    bool ok = true;
    for (const auto& k : kept) {
      if (std::fabs(spec.center(c.bin) - spec.center(k.bin)) < 0.5 * prior) { ok = false; break; }
    }
    if (ok) kept.push_back(c);
    if (static_cast<int>(kept.size()) >= max_peaks) break;
  }
  std::sort(kept.begin(), kept.end(),
            [](const Candidate& a, const Candidate& b) { return a.bin < b.bin; });

  std::vector<GaussianPeak> peaks;
  for (const auto& cand : kept) {
    const double c0 = spec.center(cand.bin);
    const double half = 0.35 * prior;
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < nb; ++i) {
      if (std::fabs(spec.center(i) - c0) <= half) {
        xs.push_back(spec.center(i));
        ys.push_back(static_cast<double>(spec.counts[i]));
      }
    }
    if (xs.size() < 4) continue;
    const std::vector<std::string> names{"amp", "center", "sigma"};
    std::vector<double> init{std::max(cand.height, 1.0), c0, std::max(prior / 6.0, spec.bin_width())};
    auto resid = [&](const std::vector<double>& p) {
      std::vector<double> r(xs.size());
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const double z = (xs[i] - p[1]) / p[2];
        const double model = p[0] * std::exp(-0.5 * z * z);
        r[i] = (ys[i] - model) / std::sqrt(ys[i] + 1.0);  // Poisson weights
      }
      return r;
    };
    FitResult fr = fit_least_squares(resid, names, init);
    GaussianPeak pk;
    pk.amplitude = fr.value("amp");
    pk.center = fr.value("center");
    pk.sigma = std::fabs(fr.value("sigma"));
    pk.center_err = fr.ci95.count("center") ? fr.sigma("center") : 0.0;
    pk.sigma_err = fr.ci95.count("sigma") ? fr.sigma("sigma") : 0.0;
    if (!std::isfinite(pk.center) || pk.amplitude <= 0.0) continue;
    peaks.push_back(pk);
  }
  std::sort(peaks.begin(), peaks.end(),
            [](const GaussianPeak& a, const GaussianPeak& b) { return a.center < b.center; });
  return peaks;
}

/// Multi-peak Gaussian fit of the spectrum; gamma is the inverse-variance-
/// weighted mean of adjacent peak spacings. Spacings more than 30% away from
/// the median are treated as spurious-peak artifacts and dropped.
inline FitResult fit_gamma(const PulseHeightSpectrum& spec, int max_peaks = 32,
                           double spacing_prior = 0.0) {
  const auto peaks = fit_spectrum_peaks(spec, max_peaks, spacing_prior);
  if (peaks.size() < 2)
    throw std::runtime_error("fit_gamma: only " + std::to_string(peaks.size()) +
                             " resolvable peak(s) detected; need at least 2");
  std::vector<double> all_spacings;
  for (std::size_t i = 0; i + 1 < peaks.size(); ++i)
    all_spacings.push_back(peaks[i + 1].center - peaks[i].center);
  const double med = sample_median(all_spacings);
  double wsum = 0.0, wval = 0.0;
  std::vector<double> spacings, vars;
  for (std::size_t i = 0; i + 1 < peaks.size(); ++i) {
    const double s = peaks[i + 1].center - peaks[i].center;
    if (all_spacings.size() > 1 && std::fabs(s - med) > 0.3 * med) continue;
    double v = peaks[i].center_err * peaks[i].center_err +
               peaks[i + 1].center_err * peaks[i + 1].center_err;
    if (!(v > 0.0) || !std::isfinite(v)) v = 1e-12 * s * s + 1e-300;
    spacings.push_back(s);
    vars.push_back(v);
    wsum += 1.0 / v;
    wval += s / v;
  }
  if (spacings.empty())
    throw std::runtime_error("fit_gamma: no consistent peak spacings");
  const double gamma = wval / wsum;
  const double gamma_sigma = std::sqrt(1.0 / wsum);
  double chi2 = 0.0;
  for (std::size_t i = 0; i < spacings.size(); ++i)
    chi2 += (spacings[i] - gamma) * (spacings[i] - gamma) / vars[i];
  FitResult out;
  out.param_names = {"gamma"};
  out.params["gamma"] = gamma;
  const double half = 1.959963984540054 * gamma_sigma;
  out.ci95["gamma"] = {gamma - half, gamma + half};
  out.chi2 = chi2;
  out.dof = static_cast<int>(spacings.size()) - 1;
  out.chi2_nu = out.dof > 0 ? chi2 / out.dof : 0.0;
  out.covariance = {{gamma_sigma * gamma_sigma}};
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    const std::string tag = "peak" + std::to_string(i);
    out.params[tag + "_center"] = peaks[i].center;
    out.params[tag + "_sigma"] = peaks[i].sigma;
    out.params[tag + "_area"] = peaks[i].area(spec.bin_width());
  }
  return out;
}

namespace detail {

inline GaussianPeak one_photon_peak(const PulseHeightSpectrum& spec, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("snr: gamma must be > 0");
  const auto peaks = fit_spectrum_peaks(spec, 32, gamma);
  for (const auto& p : peaks)
    if (std::fabs(p.center - gamma) < 0.5 * gamma) return p;
  throw std::runtime_error("snr: no 1-photon peak found near gamma");
}

}  // namespace detail

/// S/N as the ratio of the 1-photon peak mean to its variance.
inline double snr_integral(const PulseHeightSpectrum& spec, double gamma) {
  const auto p = detail::one_photon_peak(spec, gamma);
  return p.center / (p.sigma * p.sigma);
}

/// S/N as the ratio of the 1-photon peak mean to its width.
inline double snr_peak(const PulseHeightSpectrum& spec, double gamma) {
  const auto p = detail::one_photon_peak(spec, gamma);
  return p.center / p.sigma;
}

/// Classify outputs into fired-cell counts: k = round((v - offset) / gamma),
/// clamped at 0; half-integer ties round down.
inline std::vector<int> assign_k(const std::vector<double>& values, double gamma, double offset) {
  if (!(gamma > 0.0)) throw std::invalid_argument("assign_k: gamma must be > 0");
  std::vector<int> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = (values[i] - offset) / gamma;
    const double k = std::ceil(x - 0.5);
    out[i] = k < 0.0 ? 0 : static_cast<int>(k);
  }
  return out;
}

inline ShotCounts assign_k_shots(const std::vector<double>& values, double gamma, double offset,
                                 std::uint64_t seed = 0) {
  ShotCounts s;
  s.seed = seed;
  s.counts = assign_k(values, gamma, offset);
  return s;
}

// ---------------------------------------------------------------------------
// Fano-factor analysis
// ---------------------------------------------------------------------------

struct FanoPoint {
  double mean_x = 0.0;
  double fano = 0.0;
  double fano_err = 0.0;
  double gate_t_ns = 0.0;
};

/// One Fano point per intensity group, with 200-resample bootstrap errors.
/// The bootstrap resamples the count histogram multinomially, which is
/// distribution-identical to resampling the shots and much cheaper.
inline std::vector<FanoPoint> fano_curve(const std::vector<ShotCounts>& groups, double gamma,
                                         double gate_t_ns, int n_boot = 200,
                                         std::uint64_t seed = 0x66616e6fULL) {
  if (groups.size() < 1) throw std::invalid_argument("fano_curve: no groups");
  std::vector<FanoPoint> out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& counts = groups[g].counts;
    if (counts.size() < 2) throw std::invalid_argument("fano_curve: group too small");
    const double mk = sample_mean(counts);
    if (!(mk > 0.0))
      throw std::invalid_argument("fano_curve: group " + std::to_string(g) + " has zero mean");
    const double vk = sample_variance(counts);
    FanoPoint p;
    p.gate_t_ns = gate_t_ns;
    p.mean_x = gamma * mk;
    p.fano = gamma * vk / mk;

    int kmax = 0;
    for (int c : counts) kmax = std::max(kmax, c);
    std::vector<double> hist(static_cast<std::size_t>(kmax) + 1, 0.0);
    for (int c : counts) ++hist[static_cast<std::size_t>(c)];
    const auto n = static_cast<double>(counts.size());
    std::vector<double> boots(static_cast<std::size_t>(n_boot));
    for (int r = 0; r < n_boot; ++r) {
      auto rng = substream(mix64(seed + g), static_cast<std::uint64_t>(r));
      double remaining_p = 1.0;
      auto remaining_n = static_cast<long>(counts.size());
      double s1 = 0.0, s2 = 0.0;
      for (int k = 0; k <= kmax && remaining_n > 0; ++k) {
        const double pk = hist[static_cast<std::size_t>(k)] / n;
        long ck = 0;
        if (k == kmax) {
          ck = remaining_n;
        } else if (pk > 0.0 && remaining_p > 0.0) {
          const double q = std::min(pk / remaining_p, 1.0);
          std::binomial_distribution<long> bin(remaining_n, q);
          ck = bin(rng);
        }
        s1 += static_cast<double>(ck) * k;
        s2 += static_cast<double>(ck) * k * static_cast<double>(k);
        remaining_n -= ck;
        remaining_p -= pk;
      }
      const double bm = s1 / n;
      const double bv = (s2 - n * bm * bm) / (n - 1.0);
      boots[static_cast<std::size_t>(r)] = bm > 0.0 ? gamma * bv / bm : 0.0;
    }
    p.fano_err = std::sqrt(sample_variance(boots));
    out.push_back(p);
  }
  return out;
}

/// Coherent light: F(x_out) = gamma (1+3 eps)/(1+eps), a constant. Weighted
/// least squares with eps the only parameter (gamma fixed externally).
inline FitResult fit_fano_coherent(const std::vector<FanoPoint>& points, double gamma) {
  if (points.empty()) throw std::invalid_argument("fit_fano_coherent: no points");
  if (!(gamma > 0.0)) throw std::invalid_argument("fit_fano_coherent: gamma must be > 0");
  double wsum = 0.0, wval = 0.0;
  for (const auto& p : points) {
    const double var = p.fano_err > 0.0 ? p.fano_err * p.fano_err : 1e-300;
    wsum += 1.0 / var;
    wval += p.fano / var;
  }
  const double c = wval / wsum;
  const double c_sigma = std::sqrt(1.0 / wsum);
  double chi2 = 0.0;
  for (const auto& p : points) {
    const double var = p.fano_err > 0.0 ? p.fano_err * p.fano_err : 1e-300;
    chi2 += (p.fano - c) * (p.fano - c) / var;
  }
  const double u = c / gamma;
  const double eps = (u - 1.0) / (3.0 - u);
  if (!(eps >= 0.0 && eps < 1.0))
    throw std::runtime_error("fit_fano_coherent: eps estimate " + std::to_string(eps) +
                             " outside [0,1)");
  const double deps_du = 2.0 / ((3.0 - u) * (3.0 - u));
  const double eps_sigma = deps_du * c_sigma / gamma;
  FitResult out;
  out.param_names = {"eps"};
  out.params["eps"] = eps;
  out.params["fano_const"] = c;
  const double half = 1.959963984540054 * eps_sigma;
  out.ci95["eps"] = {eps - half, eps + half};
  out.ci95["fano_const"] = {c - 1.959963984540054 * c_sigma, c + 1.959963984540054 * c_sigma};
  out.chi2 = chi2;
  out.dof = static_cast<int>(points.size()) - 1;
  out.chi2_nu = out.dof > 0 ? chi2 / out.dof : 0.0;
  out.covariance = {{eps_sigma * eps_sigma}};
  return out;
}

/// Multimode thermal light, all gates fitted jointly:
///   F(x_out) = (1/mu)(1 - xdc/x_out)^2 x_out + gamma (1+3 eps_g)/(1+eps_g),
/// with xdc constrained linear in the gate width (xdc_g = s T_g) and mu
/// shared. eps_g come from the coherent fits. Uncertainties are rescaled so
/// chi2_nu = 1.
inline FitResult fit_fano_thermal(
    const std::vector<std::pair<double, std::vector<FanoPoint>>>& gates, double gamma,
    const std::vector<double>& eps_per_gate) {
  if (gates.empty()) throw std::invalid_argument("fit_fano_thermal: no gates");
  if (eps_per_gate.size() != gates.size())
    throw std::invalid_argument("fit_fano_thermal: eps_per_gate size mismatch");
  if (!(gamma > 0.0)) throw std::invalid_argument("fit_fano_thermal: gamma must be > 0");

  struct Row { double t, x, f, err, floor_; };
  std::vector<Row> rows;
  for (std::size_t g = 0; g < gates.size(); ++g) {
    const double e = eps_per_gate[g];
    const double floor_g = gamma * (1.0 + 3.0 * e) / (1.0 + e);
    for (const auto& p : gates[g].second) {
      if (!(p.mean_x > 0.0)) continue;
      rows.push_back({gates[g].first, p.mean_x, p.fano,
                      p.fano_err > 0.0 ? p.fano_err : 1e-150, floor_g});
    }
  }
  if (rows.size() < 3) throw std::invalid_argument("fit_fano_thermal: too few usable points");

  // init mu from the widest-intensity point, slope from nothing
  double mu0 = 1.5;
  {
    const auto& r = *std::max_element(rows.begin(), rows.end(),
                                      [](const Row& a, const Row& b) { return a.x < b.x; });
    const double excess = r.f - r.floor_;
    if (excess > 1e-6) mu0 = std::clamp(r.x / excess, 1.0, 500.0);
  }
  auto resid = [&](const std::vector<double>& p) {
    const double mu = p[0], s = p[1];
    std::vector<double> r(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double xdc = s * rows[i].t;
      const double frac = 1.0 - xdc / rows[i].x;
      const double model = frac * frac * rows[i].x / mu + rows[i].floor_;
      r[i] = (rows[i].f - model) / rows[i].err;
    }
    return r;
  };
  FitOptions opts;
  opts.scale_errors_to_unit_chi2 = true;
  FitResult fr = fit_least_squares(resid, {"mu", "xdc_slope_per_ns"}, {mu0, 0.0}, opts);
  if (!std::isfinite(fr.value("mu")) || !std::isfinite(fr.chi2))
    throw std::runtime_error("fit_fano_thermal: fit did not converge");
  if (fr.value("mu") < 0.999)
    throw std::runtime_error("fit_fano_thermal: recovered mu = " +
                             std::to_string(fr.value("mu")) + " < 1");

  const double slope = fr.value("xdc_slope_per_ns");
  const double slope_sig = fr.ci95.count("xdc_slope_per_ns") ? fr.sigma("xdc_slope_per_ns") : 0.0;
  for (std::size_t g = 0; g < gates.size(); ++g) {
    const double t = gates[g].first;
    char name[48];
    std::snprintf(name, sizeof(name), "xdc_%gns", t);
    fr.params[name] = slope * t;
    const double half = 1.959963984540054 * slope_sig * t;
    fr.ci95[name] = {slope * t - half, slope * t + half};
  }
  // DCR bookkeeping: xdc/(gamma T) expressed in Hz
  fr.params["dcr_hz"] = slope / gamma * 1e9;
  const double dcr_half = 1.959963984540054 * slope_sig / gamma * 1e9;
  fr.ci95["dcr_hz"] = {fr.params["dcr_hz"] - dcr_half, fr.params["dcr_hz"] + dcr_half};
  return fr;
}

// ---------------------------------------------------------------------------
// Cross talk versus gate width
// ---------------------------------------------------------------------------

struct EpsPoint {
  double gate_t_ns = 0.0;
  double eps = 0.0;
  double err = 0.0;
};

/// Two-regime fit of eps(T): below the breakpoint the temporal model
///   eps = eps0 + (tau/T) a [1 - exp(-T/tau)],
/// above it the dark-count-driven linear tail eps = m T + q (m in Hz).
inline FitResult fit_eps_vs_gate(const std::vector<EpsPoint>& points,
                                 double breakpoint_ns = 150.0) {
  std::vector<EpsPoint> shortp, longp;
  for (const auto& p : points) (p.gate_t_ns <= breakpoint_ns ? shortp : longp).push_back(p);
  if (shortp.size() < 3)
    throw std::invalid_argument("fit_eps_vs_gate: need >= 3 points at or below the breakpoint, got " +
                                std::to_string(shortp.size()));
  if (longp.size() < 2)
    throw std::invalid_argument("fit_eps_vs_gate: need >= 2 points above the breakpoint, got " +
                                std::to_string(longp.size()));

  auto err_of = [](const EpsPoint& p) { return p.err > 0.0 ? p.err : 1e-150; };

  // short regime: (eps0, a, tau)
  std::sort(shortp.begin(), shortp.end(),
            [](const EpsPoint& a, const EpsPoint& b) { return a.gate_t_ns < b.gate_t_ns; });
  const double eps0_init = shortp.back().eps;
  const double a_init = std::max(shortp.front().eps - shortp.back().eps, 0.0);
  auto short_resid = [&](const std::vector<double>& p) {
    std::vector<double> r(shortp.size());
    for (std::size_t i = 0; i < shortp.size(); ++i) {
      const double t = shortp[i].gate_t_ns;
      const double model = p[0] + (p[2] / t) * p[1] * (1.0 - std::exp(-t / p[2]));
      r[i] = (shortp[i].eps - model) / err_of(shortp[i]);
    }
    return r;
  };
  FitResult sf = fit_least_squares(short_resid, {"eps0", "a", "tau_xc_ns"},
                                   {eps0_init, a_init, 50.0});

  // long regime: weighted straight line, slope reported in Hz
  double sw = 0.0, swx = 0.0, swy = 0.0, swxx = 0.0, swxy = 0.0;
  for (const auto& p : longp) {
    const double w = 1.0 / (err_of(p) * err_of(p));
    const double x = p.gate_t_ns * 1e-9;  // seconds
    sw += w; swx += w * x; swy += w * p.eps; swxx += w * x * x; swxy += w * x * p.eps;
  }
  const double denom = sw * swxx - swx * swx;
  if (!(std::fabs(denom) > 0.0))
    throw std::runtime_error("fit_eps_vs_gate: degenerate long-regime abscissa");
  const double m_hz = (sw * swxy - swx * swy) / denom;
  const double q = (swxx * swy - swx * swxy) / denom;
  const double var_m = sw / denom;
  const double var_q = swxx / denom;
  double chi2_long = 0.0;
  for (const auto& p : longp) {
    const double model = m_hz * p.gate_t_ns * 1e-9 + q;
    const double z = (p.eps - model) / err_of(p);
    chi2_long += z * z;
  }

  FitResult out = sf;
  out.param_names = {"eps0", "a", "tau_xc_ns", "m_hz", "q"};
  out.params["m_hz"] = m_hz;
  out.params["q"] = q;
  const double mh = 1.959963984540054 * std::sqrt(var_m);
  const double qh = 1.959963984540054 * std::sqrt(var_q);
  out.ci95["m_hz"] = {m_hz - mh, m_hz + mh};
  out.ci95["q"] = {q - qh, q + qh};
  out.chi2 += chi2_long;
  out.dof += static_cast<int>(longp.size()) - 2;
  out.chi2_nu = out.dof > 0 ? out.chi2 / out.dof : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Correlations
// ---------------------------------------------------------------------------

/// Sample Pearson correlation of the two arms with a 200-resample pair
/// bootstrap error.
inline std::pair<double, double> corr_coefficient(const ShotCounts& k1, const ShotCounts& k2,
                                                  int n_boot = 200,
                                                  std::uint64_t seed = 0x636f7272ULL) {
  if (k1.counts.size() != k2.counts.size())
    throw std::invalid_argument("corr_coefficient: length mismatch");
  const std::size_t n = k1.counts.size();
  if (n < 1000) throw std::invalid_argument("corr_coefficient: need at least 1000 pairs");
  const double corr = pearson_correlation(k1.counts, k2.counts);
  std::vector<double> boots(static_cast<std::size_t>(n_boot));
  std::vector<int> a(n), b(n);
  for (int r = 0; r < n_boot; ++r) {
    auto rng = substream(seed, static_cast<std::uint64_t>(r));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = pick(rng);
      a[i] = k1.counts[j];
      b[i] = k2.counts[j];
    }
    boots[static_cast<std::size_t>(r)] = pearson_correlation(a, b);
  }
  return {corr, std::sqrt(sample_variance(boots))};
}

/// Ideal multimode-thermal correlation coefficient between the two outputs of
/// a beam splitter.
inline double corr_thermal_ideal(double m1, double m2, double mu1, double mu2) {
  if (!(m1 >= 0.0 && m2 >= 0.0)) throw std::invalid_argument("corr_thermal_ideal: means must be >= 0");
  if (!(mu1 >= 1.0 && mu2 >= 1.0)) throw std::invalid_argument("corr_thermal_ideal: modes must be >= 1");
  const double r1 = m1 / mu1, r2 = m2 / mu2;
  return std::sqrt(r1 * r2) / std::sqrt((1.0 + r1) * (1.0 + r2));
}

namespace detail {

inline double bracketed_mean(double k_mean, double eps, double dc, const char* who) {
  const double b = k_mean / (1.0 + eps) - dc;
  if (b < 0.0)
    throw std::domain_error(std::string(who) +
                            ": bracketed detected mean <k>/(1+eps) - <m>_dc is negative");
  return b;
}

}  // namespace detail

/// Measured correlation corrected for cross talk and dark counts by restoring
/// the true detected means through <k> = (<m> + <m>_dc)(1+eps). Identical to
/// corr_thermal_ideal when eps = dc = 0.
inline double corr_thermal_corrected(double k1_mean, double k2_mean, double eps1, double eps2,
                                     double dc1, double dc2, double mu1, double mu2) {
  const double b1 = detail::bracketed_mean(k1_mean, eps1, dc1, "corr_thermal_corrected");
  const double b2 = detail::bracketed_mean(k2_mean, eps2, dc2, "corr_thermal_corrected");
  return corr_thermal_ideal(b1, b2, mu1, mu2);
}

/// Exact Pearson correlation of the first-order cascade detector viewing
/// split multimode-thermal light. Uses the same variance bookkeeping as the
/// closed-form output moments:
///   Cov   = (1+eps1)(1+eps2) sqrt(b1^2 b2^2 / (mu1 mu2)),
///   Var_i = (1+eps_i)^2 (b_i + b_i^2/mu_i + dc_i) + eps_i (1-eps_i)(b_i + dc_i).
/// Also reduces to corr_thermal_ideal when eps = dc = 0.
inline double corr_thermal_cascade(double k1_mean, double k2_mean, double eps1, double eps2,
                                   double dc1, double dc2, double mu1, double mu2) {
  const double b1 = detail::bracketed_mean(k1_mean, eps1, dc1, "corr_thermal_cascade");
  const double b2 = detail::bracketed_mean(k2_mean, eps2, dc2, "corr_thermal_cascade");
  if (!(mu1 >= 1.0 && mu2 >= 1.0)) throw std::invalid_argument("corr_thermal_cascade: modes must be >= 1");
  const double cov = (1.0 + eps1) * (1.0 + eps2) * b1 * b2 / std::sqrt(mu1 * mu2);
  const double v1 = (1.0 + eps1) * (1.0 + eps1) * (b1 + b1 * b1 / mu1 + dc1) +
                    eps1 * (1.0 - eps1) * (b1 + dc1);
  const double v2 = (1.0 + eps2) * (1.0 + eps2) * (b2 + b2 * b2 / mu2 + dc2) +
                    eps2 * (1.0 - eps2) * (b2 + dc2);
  if (!(v1 > 0.0 && v2 > 0.0)) return 0.0;
  return cov / std::sqrt(v1 * v2);
}

struct CorrPoint {
  double mean_k = 0.0;  // average of the two arms
  double corr = 0.0;
  double corr_err = 0.0;
  double gate_t_ns = 0.0;
};

enum class CorrFitModel {
  kCascade,    // exact first-order-cascade correlation (round-trip consistent)
  kMeanOnly,   // mean-corrected form, corr_thermal_corrected
};

/// Single-parameter weighted fit of mu, shared by both arms; eps and dc are
/// fixed per gate from the prior fits.
inline FitResult fit_correlation(const std::vector<CorrPoint>& points, double eps, double mean_dc,
                                 CorrFitModel model = CorrFitModel::kCascade) {
  if (points.size() < 2) throw std::invalid_argument("fit_correlation: need >= 2 points");
  // init mu from the largest-mean point through the ideal inversion
  double mu0 = 1.5;
  {
    const auto& p = *std::max_element(points.begin(), points.end(),
                                      [](const CorrPoint& a, const CorrPoint& b) {
                                        return a.mean_k < b.mean_k;
                                      });
    if (p.corr > 1e-6 && p.corr < 0.999) {
      const double b = std::max(p.mean_k / (1.0 + eps) - mean_dc, 1e-9);
      mu0 = std::clamp(b * (1.0 - p.corr) / p.corr, 1.0, 500.0);
    }
  }
  auto resid = [&](const std::vector<double>& p) {
    const double mu = std::max(p[0], 1.0);
    std::vector<double> r(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double k = points[i].mean_k;
      const double g = model == CorrFitModel::kCascade
                           ? corr_thermal_cascade(k, k, eps, eps, mean_dc, mean_dc, mu, mu)
                           : corr_thermal_corrected(k, k, eps, eps, mean_dc, mean_dc, mu, mu);
      const double err = points[i].corr_err > 0.0 ? points[i].corr_err : 1e-150;
      r[i] = (points[i].corr - g) / err;
    }
    return r;
  };
  FitResult fr = fit_least_squares(resid, {"mu"}, {mu0});
  if (!std::isfinite(fr.value("mu")) || !std::isfinite(fr.chi2))
    throw std::runtime_error("fit_correlation: fit did not converge");
  return fr;
}

// ---------------------------------------------------------------------------
// Goodness of fit
// ---------------------------------------------------------------------------

struct GofResult {
  double chi2 = 0.0;
  int dof = 0;
  double chi2_nu = 0.0;
  double p_value = 0.0;
  int pooled_bins = 0;
};

/// Pearson chi-square of observed counts against a theory pmf. The theory is
/// truncated to the observed support with the remaining tail pooled into the
/// last bin; bins with expected count below 5 are pooled with their
/// neighbors. dof = pooled bins - 1 - n_fitted.
inline GofResult gof_pmf_details(const ShotCounts& observed, const PhotonDistribution& theory,
                                 int n_fitted = 0) {
  if (observed.counts.empty()) throw std::invalid_argument("gof_pmf: no observations");
  const double n = static_cast<double>(observed.counts.size());
  int kmax = 0;
  for (int c : observed.counts) kmax = std::max(kmax, c);
  kmax = std::max(kmax, theory.n_max());
  std::vector<double> expected(static_cast<std::size_t>(kmax) + 1, 0.0);
  std::vector<double> obs(static_cast<std::size_t>(kmax) + 1, 0.0);
  double cum = 0.0;
  for (int k = 0; k <= kmax; ++k) {
    expected[static_cast<std::size_t>(k)] = n * theory[static_cast<std::size_t>(k)];
    cum += theory[static_cast<std::size_t>(k)];
  }
  expected[static_cast<std::size_t>(kmax)] += n * std::max(1.0 - cum, 0.0);  // tail pooling
  for (int c : observed.counts) ++obs[static_cast<std::size_t>(std::min(c, kmax))];

  std::vector<double> pooled_e, pooled_o;
  double acc_e = 0.0, acc_o = 0.0;
  for (std::size_t k = 0; k < expected.size(); ++k) {
    acc_e += expected[k];
    acc_o += obs[k];
    if (acc_e >= 5.0) {
      pooled_e.push_back(acc_e);
      pooled_o.push_back(acc_o);
      acc_e = acc_o = 0.0;
    }
  }
  if (acc_e > 0.0 || acc_o > 0.0) {
    if (!pooled_e.empty()) {
      pooled_e.back() += acc_e;
      pooled_o.back() += acc_o;
    } else {
      pooled_e.push_back(acc_e);
      pooled_o.push_back(acc_o);
    }
  }
  if (pooled_e.size() < 2)
    throw std::runtime_error("gof_pmf: fewer than 2 pooled bins; cannot form a chi-square");
  GofResult r;
  for (std::size_t i = 0; i < pooled_e.size(); ++i) {
    const double d = pooled_o[i] - pooled_e[i];
    r.chi2 += d * d / pooled_e[i];
  }
  r.pooled_bins = static_cast<int>(pooled_e.size());
  r.dof = r.pooled_bins - 1 - n_fitted;
  if (r.dof < 1) throw std::runtime_error("gof_pmf: non-positive degrees of freedom after pooling");
  r.chi2_nu = r.chi2 / r.dof;
  r.p_value = chi2_survival(r.chi2, r.dof);
  return r;
}

inline double gof_pmf(const ShotCounts& observed, const PhotonDistribution& theory,
                      int n_fitted = 0) {
  return gof_pmf_details(observed, theory, n_fitted).chi2_nu;
}

}  // namespace sipmlab
