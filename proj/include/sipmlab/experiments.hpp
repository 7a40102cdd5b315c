#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sipmlab/config.hpp"
#include "sipmlab/detector.hpp"
#include "sipmlab/parallel.hpp"
#include "sipmlab/sources.hpp"
#include "sipmlab/waveform.hpp"

namespace sipmlab {

// Stage tags keep the substreams of different pipeline stages disjoint.
namespace seedtag {
inline constexpr std::uint64_t kSource = 0x01;
inline constexpr std::uint64_t kThin = 0x02;
inline constexpr std::uint64_t kSplit = 0x03;
inline constexpr std::uint64_t kDetect1 = 0x04;
inline constexpr std::uint64_t kDetect2 = 0x05;
inline constexpr std::uint64_t kEvents = 0x06;
inline constexpr std::uint64_t kSynth = 0x07;
}  // namespace seedtag

inline std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  return mix64(mix64(seed ^ mix64(tag)) + index);
}

/// Counts-level intensity scan: one master photon stream, independently
/// thinned per attenuation (the ND-wheel procedure), then Monte Carlo
/// detection. Returns one fired-cell group per attenuation.
inline std::vector<ShotCounts> counts_scan(const SourceSpec& src,
                                           const std::vector<double>& attenuations,
                                           const DetectorParams& det, std::int64_t trials,
                                           std::uint64_t seed, int jobs = 1) {
  const ShotCounts master = sample_shots(src, trials, stage_seed(seed, seedtag::kSource), jobs);
  std::vector<ShotCounts> groups;
  groups.reserve(attenuations.size());
  for (std::size_t a = 0; a < attenuations.size(); ++a) {
    ShotCounts thinned =
        thin_shots(master, attenuations[a], stage_seed(seed, seedtag::kThin, a), jobs);
    groups.push_back(mc_detect(thinned, det, stage_seed(seed, seedtag::kDetect1, a), jobs));
  }
  return groups;
}

/// Split-beam intensity scan for the correlation measurement: thermal master
/// stream, thinning, balanced splitting, then two independent detectors.
inline std::vector<std::pair<ShotCounts, ShotCounts>> split_scan(
    const SourceSpec& src, const std::vector<double>& attenuations, const DetectorParams& det1,
    const DetectorParams& det2, std::int64_t trials, std::uint64_t seed, int jobs = 1,
    double transmittance = 0.5) {
  const ShotCounts master = sample_shots(src, trials, stage_seed(seed, seedtag::kSource), jobs);
  std::vector<std::pair<ShotCounts, ShotCounts>> out;
  out.reserve(attenuations.size());
  for (std::size_t a = 0; a < attenuations.size(); ++a) {
    ShotCounts thinned =
        thin_shots(master, attenuations[a], stage_seed(seed, seedtag::kThin, a), jobs);
    auto arms = split_beam(thinned, transmittance, stage_seed(seed, seedtag::kSplit, a));
    out.emplace_back(mc_detect(arms.first, det1, stage_seed(seed, seedtag::kDetect1, a), jobs),
                     mc_detect(arms.second, det2, stage_seed(seed, seedtag::kDetect2, a), jobs));
  }
  return out;
}

/// Full acquisition run at one source setting: place events, render traces,
/// and either integrate every configured gate or extract peak heights.
struct WaveformRun {
  std::vector<double> gates_ns;
  std::vector<std::vector<double>> charges;  // [gate][shot], gate mode
  std::vector<double> peak_heights;          // peak-hold mode
  std::vector<int> photons;                  // per-shot photon numbers before detection
};

inline WaveformRun run_waveform(const SourceSpec& src, const DetectorParams& det,
                                const TemporalCrosstalkParams& xt, const PulseShape& shape,
                                const TraceSpec& trace, double laser_time_ns,
                                const std::vector<double>& gates_ns, AcquisitionMode mode,
                                double peak_search_ns, std::int64_t trials, std::uint64_t seed,
                                int jobs = 1) {
  const ShotCounts photons = sample_shots(src, trials, stage_seed(seed, seedtag::kSource), jobs);
  WaveformRun run;
  run.photons = photons.counts;
  run.gates_ns = gates_ns;
  const auto n = static_cast<std::size_t>(trials);
  if (mode == AcquisitionMode::kGate) {
    run.charges.assign(gates_ns.size(), std::vector<double>(n, 0.0));
  } else {
    run.peak_heights.assign(n, 0.0);
  }
  const std::uint64_t ev_seed = stage_seed(seed, seedtag::kEvents);
  const std::uint64_t synth_seed = stage_seed(seed, seedtag::kSynth);
  parallel_for(n, jobs, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto events = place_events(photons.counts[i], det, xt, trace.window_ns,
                                       laser_time_ns, mix64(ev_seed + i));
      const TraceRecord rec = synth_trace(events, shape, trace, mix64(synth_seed + i));
      const double baseline = trace_baseline(rec);
      if (mode == AcquisitionMode::kGate) {
        for (std::size_t g = 0; g < gates_ns.size(); ++g)
          run.charges[g][i] =
              gate_integrate(rec, GateSpec{laser_time_ns, gates_ns[g]}, baseline);
      } else {
        run.peak_heights[i] =
            peak_hold(rec, GateSpec{laser_time_ns, peak_search_ns}, baseline);
      }
    }
  });
  return run;
}

/// Dark-only traces for the threshold staircase.
inline std::vector<TraceRecord> dark_traces(const DetectorParams& det,
                                            const TemporalCrosstalkParams& xt,
                                            const PulseShape& shape, const TraceSpec& trace,
                                            std::size_t n_traces, std::uint64_t seed,
                                            int jobs = 1) {
  std::vector<TraceRecord> out(n_traces);
  const std::uint64_t ev_seed = stage_seed(seed, seedtag::kEvents);
  const std::uint64_t synth_seed = stage_seed(seed, seedtag::kSynth);
  parallel_for(n_traces, jobs, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto events =
          place_events(0, det, xt, trace.window_ns, 0.0, mix64(ev_seed + i));
      out[i] = synth_trace(events, shape, trace, mix64(synth_seed + i));
    }
  });
  return out;
}

}  // namespace sipmlab
