#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sipmlab/detector.hpp"
#include "sipmlab/rng.hpp"

namespace sipmlab {

/// Single-cell pulse, a difference of exponentials normalized so one fired
/// cell integrates to unit charge over the extinction window.
struct PulseShape {
  double rise_tau_ns = 2.0;
  double fall_tau_ns = 40.0;
  double extinction_ns = 150.0;

  void validate() const {
    if (!(rise_tau_ns > 0.0 && fall_tau_ns > 0.0))
      throw std::invalid_argument("PulseShape: time constants must be > 0");
    if (!(rise_tau_ns < fall_tau_ns))
      throw std::invalid_argument("PulseShape: rise_tau must be below fall_tau");
    if (!(extinction_ns > 0.0)) throw std::invalid_argument("PulseShape: extinction must be > 0");
  }

  // integral of (e^{-t/tf} - e^{-t/tr}) over [0, t]
  double raw_integral(double t) const {
    if (t <= 0.0) return 0.0;
    return fall_tau_ns * (1.0 - std::exp(-t / fall_tau_ns)) -
           rise_tau_ns * (1.0 - std::exp(-t / rise_tau_ns));
  }

  double norm() const { return 1.0 / raw_integral(extinction_ns); }

  /// Amplitude (per ns of charge) at time t after onset.
  double value(double t) const {
    if (t <= 0.0) return 0.0;
    return norm() * (std::exp(-t / fall_tau_ns) - std::exp(-t / rise_tau_ns));
  }

  double peak_time() const {
    return std::log(fall_tau_ns / rise_tau_ns) * rise_tau_ns * fall_tau_ns /
           (fall_tau_ns - rise_tau_ns);
  }

  /// Peak amplitude of a unit-charge pulse.
  double peak_amplitude() const { return value(peak_time()); }

  /// Fraction of the total (extinction-window) charge collected by time t.
  double charge_fraction(double t) const { return raw_integral(t) * norm(); }
};

/// Temporal cross-talk model: prompt probability eps0 plus a delayed
/// component with density a exp(-t/tau_xc).
struct TemporalCrosstalkParams {
  double eps0 = 0.0219;
  double a = 0.0004;
  double tau_xc_ns = 53.0;

  void validate() const {
    if (!(eps0 >= 0.0 && a >= 0.0)) throw std::invalid_argument("TemporalCrosstalkParams: negative probability");
    if (!(tau_xc_ns > 0.0)) throw std::invalid_argument("TemporalCrosstalkParams: tau_xc must be > 0");
  }
};

/// Effective cross-talk probability integrated over a gate of width T:
///   eps(T) = eps0 + (tau_xc / T) a [1 - exp(-T / tau_xc)].
inline double eps_effective(const TemporalCrosstalkParams& xt, double gate_t_ns) {
  xt.validate();
  if (!(gate_t_ns > 0.0)) throw std::invalid_argument("eps_effective: gate width must be > 0");
  return xt.eps0 + (xt.tau_xc_ns / gate_t_ns) * xt.a * (1.0 - std::exp(-gate_t_ns / xt.tau_xc_ns));
}

struct GateSpec {
  double start_ns = 0.0;
  double width_ns = 0.0;
};

/// Digitizer and front-end description used when rendering traces.
/// baseline noise is white Gaussian at the input; with hp_tau_ns > 0 it is
/// passed through a single-pole high-pass (AC-coupled front end), which makes
/// the gated noise integral saturate for long gates the way the hardware's
/// does. hp_tau_ns = 0 keeps the noise white.
struct TraceSpec {
  double rate_hz = 250e6;
  int bits = 12;
  double window_ns = 10000.0;
  double baseline_sigma = 3.4e-3;
  double hp_tau_ns = 50.0;
  double pretrigger_frac = 0.1;
  double full_scale_cells = 40.0;  // mid-tread quantizer full scale, in 1-cell peak amplitudes
  double gamma = 1.0;              // charge per fired cell
  double gain_spread = 0.02;       // per-cell multiplicative gain sigma

  void validate() const {
    if (!(rate_hz > 0.0)) throw std::invalid_argument("TraceSpec: rate must be > 0");
    if (bits < 2 || bits > 16) throw std::invalid_argument("TraceSpec: bits outside [2,16]");
    if (!(window_ns > 0.0)) throw std::invalid_argument("TraceSpec: window must be > 0");
    if (!(baseline_sigma >= 0.0)) throw std::invalid_argument("TraceSpec: negative noise sigma");
    if (!(hp_tau_ns >= 0.0)) throw std::invalid_argument("TraceSpec: negative hp_tau");
    if (!(pretrigger_frac >= 0.0 && pretrigger_frac < 1.0))
      throw std::invalid_argument("TraceSpec: pretrigger_frac outside [0,1)");
    if (!(full_scale_cells > 0.0)) throw std::invalid_argument("TraceSpec: full scale must be > 0");
    if (!(gamma > 0.0)) throw std::invalid_argument("TraceSpec: gamma must be > 0");
    if (!(gain_spread >= 0.0)) throw std::invalid_argument("TraceSpec: negative gain_spread");
  }

  double dt_ns() const { return 1e9 / rate_hz; }
  std::size_t n_samples() const {
    return static_cast<std::size_t>(window_ns * rate_hz * 1e-9);
  }
  double lsb(const PulseShape& shape) const {
    return full_scale_cells * gamma * shape.peak_amplitude() / std::pow(2.0, bits);
  }
};

/// One digitized single-shot waveform. Samples are stored as signed codes;
/// multiply by lsb to recover amplitudes.
struct TraceRecord {
  std::vector<std::int16_t> samples;
  double rate_hz = 0.0;
  int bits = 0;
  double window_ns = 0.0;
  double baseline_sigma = 0.0;
  double lsb = 1.0;
  double pretrigger_frac = 0.1;

  double dt_ns() const { return 1e9 / rate_hz; }
  double amplitude(std::size_t i) const { return static_cast<double>(samples[i]) * lsb; }
};

struct TimedEvent {
  double time_ns = 0.0;
  int cells = 0;
};

/// Avalanche times and multiplicities for one shot: photon avalanches at the
/// laser time after Bernoulli thinning, dark avalanches as a homogeneous
/// Poisson process over the window, and at most one secondary per avalanche
/// (prompt at the parent time with probability eps0, otherwise delayed with
/// the probability given by the temporal model integrated over the remaining
/// window and an offset drawn from the truncated exponential).
inline std::vector<TimedEvent> place_events(int shot_photons, const DetectorParams& det,
                                            const TemporalCrosstalkParams& xt, double window_ns,
                                            double laser_time_ns, std::uint64_t seed) {
  det.validate();
  xt.validate();
  if (!(laser_time_ns >= 0.0 && laser_time_ns < window_ns))
    throw std::invalid_argument("place_events: laser_time outside window");
  auto rng = substream(seed, 0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  std::vector<std::pair<double, int>> primaries;  // (time, count)
  int m = 0;
  if (det.eta >= 1.0) {
    m = shot_photons;
  } else if (det.eta > 0.0 && shot_photons > 0) {
    std::binomial_distribution<int> thin(shot_photons, det.eta);
    m = thin(rng);
  }
  if (m > 0) primaries.push_back({laser_time_ns, m});
  if (det.dcr_hz > 0.0) {
    std::poisson_distribution<int> darkn(det.dcr_hz * window_ns * 1e-9);
    const int nd = darkn(rng);
    for (int i = 0; i < nd; ++i) primaries.push_back({uni(rng) * window_ns, 1});
  }

  std::vector<TimedEvent> events;
  for (const auto& [t0, count] : primaries) {
    int prompt = 0;
    std::vector<double> delayed;
    const double t_rem = window_ns - t0;
    double p_delayed = 0.0;
    if (xt.a > 0.0 && t_rem > 0.0)
      p_delayed = (xt.tau_xc_ns / t_rem) * xt.a * (1.0 - std::exp(-t_rem / xt.tau_xc_ns));
    for (int i = 0; i < count; ++i) {
      const double u = uni(rng);
      if (u < xt.eps0) {
        ++prompt;
      } else if (p_delayed > 0.0 && uni(rng) < p_delayed) {
        // truncated exponential on (0, t_rem]
        const double span = 1.0 - std::exp(-t_rem / xt.tau_xc_ns);
        const double dt = -xt.tau_xc_ns * std::log1p(-uni(rng) * span);
        delayed.push_back(t0 + std::min(dt, t_rem));
      }
    }
    events.push_back({t0, count + prompt});
    for (double td : delayed) events.push_back({std::min(td, window_ns * (1.0 - 1e-12)), 1});
  }
  return events;
}

/// Render events into a digitized trace: per-cell gain jitter, pulse
/// superposition, front-end noise, mid-tread quantization.
inline TraceRecord synth_trace(const std::vector<TimedEvent>& events, const PulseShape& shape,
                               const TraceSpec& spec, std::uint64_t seed) {
  shape.validate();
  spec.validate();
  const std::size_t n = spec.n_samples();
  if (n < 2) throw std::invalid_argument("synth_trace: window shorter than two samples");
  const double dt = spec.dt_ns();
  std::vector<double> wave(n, 0.0);

  auto rng = substream(seed, 1);
  std::normal_distribution<double> jitter(1.0, spec.gain_spread);
  for (const auto& ev : events) {
    if (!(ev.time_ns >= 0.0 && ev.time_ns < spec.window_ns))
      throw std::invalid_argument("synth_trace: event outside window");
    if (ev.cells <= 0) continue;
    double amp = 0.0;
    if (spec.gain_spread > 0.0) {
      for (int c = 0; c < ev.cells; ++c) amp += jitter(rng);
    } else {
      amp = static_cast<double>(ev.cells);
    }
    amp *= spec.gamma;
    const std::size_t first = static_cast<std::size_t>(std::max(ev.time_ns, 0.0) / dt);
    const std::size_t last =
        std::min(n, static_cast<std::size_t>((ev.time_ns + shape.extinction_ns) / dt) + 2);
    for (std::size_t i = first; i < last; ++i)
      wave[i] += amp * shape.value(static_cast<double>(i) * dt - ev.time_ns);
  }

  if (spec.baseline_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.baseline_sigma);
    if (spec.hp_tau_ns > 0.0) {
      const double alpha = spec.hp_tau_ns / (spec.hp_tau_ns + dt);
      double xprev = 0.0, yprev = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double x = noise(rng);
        const double y = alpha * (yprev + x - xprev);
        wave[i] += y;
        xprev = x;
        yprev = y;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) wave[i] += noise(rng);
    }
  }

  TraceRecord rec;
  rec.rate_hz = spec.rate_hz;
  rec.bits = spec.bits;
  rec.window_ns = spec.window_ns;
  rec.baseline_sigma = spec.baseline_sigma;
  rec.pretrigger_frac = spec.pretrigger_frac;
  rec.lsb = spec.lsb(shape);
  rec.samples.resize(n);
  const auto code_min = static_cast<std::int32_t>(-(1 << (spec.bits - 1)));
  const auto code_max = static_cast<std::int32_t>((1 << (spec.bits - 1)) - 1);
  for (std::size_t i = 0; i < n; ++i) {
    auto code = static_cast<std::int32_t>(std::lround(wave[i] / rec.lsb));
    code = std::clamp(code, code_min, code_max);
    rec.samples[i] = static_cast<std::int16_t>(code);
  }
  return rec;
}

/// Pedestal estimate: mean amplitude of the pre-trigger region (the first
/// pretrigger_frac of the window).
inline double trace_baseline(const TraceRecord& rec) {
  const std::size_t npre =
      std::max<std::size_t>(1, static_cast<std::size_t>(rec.pretrigger_frac *
                                                        static_cast<double>(rec.samples.size())));
  double s = 0.0;
  for (std::size_t i = 0; i < npre && i < rec.samples.size(); ++i) s += rec.amplitude(i);
  return s / static_cast<double>(std::min(npre, rec.samples.size()));
}

/// Baseline-subtracted charge in the gate, in amplitude x ns units. Pass a
/// precomputed `baseline` (e.g. a run-averaged pedestal) to skip the
/// per-trace estimate.
inline double gate_integrate(const TraceRecord& rec, const GateSpec& gate,
                             double baseline = std::nan("")) {
  if (!(gate.width_ns > 0.0) || gate.start_ns < 0.0 ||
      gate.start_ns + gate.width_ns > rec.window_ns + 1e-9)
    throw std::invalid_argument("gate_integrate: gate outside trace window");
  const double b = std::isnan(baseline) ? trace_baseline(rec) : baseline;
  const double dt = rec.dt_ns();
  const auto first = static_cast<std::size_t>(std::ceil(gate.start_ns / dt - 1e-9));
  const auto last = std::min        (rec.samples.size(),
      static_cast<std::size_t>(std::floor((gate.start_ns + gate.width_ns) / dt - 1e-9)) + 1);
  double q = 0.0;
  for (std::size_t i = first; i < last; ++i) q += rec.amplitude(i) - b;
  return q * dt;
}

/// Maximum baseline-subtracted sample in the search window.
inline double peak_hold(const TraceRecord& rec, const GateSpec& search,
                        double baseline = std::nan("")) {
  if (!(search.width_ns > 0.0) || search.start_ns < 0.0 ||
      search.start_ns + search.width_ns > rec.window_ns + 1e-9)
    throw std::invalid_argument("peak_hold: search window outside trace");
  const double b = std::isnan(baseline) ? trace_baseline(rec) : baseline;
  const double dt = rec.dt_ns();
  const auto first = static_cast<std::size_t>(std::ceil(search.start_ns / dt - 1e-9));
  const auto last = std::min(rec.samples.size(),
      static_cast<std::size_t>(std::floor((search.start_ns + search.width_ns) / dt - 1e-9)) + 1);
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = first; i < last; ++i) peak = std::max(peak, rec.amplitude(i) - b);
  return peak;
}

/// Dark staircase: rate of upward threshold crossings per unit time, with one
/// pulse-extinction dead time per crossing to avoid double counting.
inline std::vector<std::pair<double, double>> threshold_scan(
    const std::vector<TraceRecord>& dark_traces, const std::vector<double>& thresholds,
    double dead_time_ns = 150.0) {
  if (dark_traces.empty()) throw std::invalid_argument("threshold_scan: no traces");
  double total_time_s = 0.0;
  for (const auto& t : dark_traces) total_time_s += t.window_ns * 1e-9;
  std::vector<std::pair<double, double>> out;
  out.reserve(thresholds.size());
  for (double th : thresholds) {
    std::uint64_t crossings = 0;
    for (const auto& rec : dark_traces) {
      const double b = trace_baseline(rec);
      const double dt = rec.dt_ns();
      double allowed_from = 0.0;
      bool below = true;
      for (std::size_t i = 0; i < rec.samples.size(); ++i) {
        const double v = rec.amplitude(i) - b;
        const double t = static_cast<double>(i) * dt;
        if (v >= th) {
          if (below && t >= allowed_from) {
            ++crossings;
            allowed_from = t + dead_time_ns;
          }
          below = false;
        } else {
          below = true;
        }
      }
    }
    out.emplace_back(th, static_cast<double>(crossings) / total_time_s);
  }
  return out;
}

}  // namespace sipmlab
