#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sipmlab/detector.hpp"
#include "sipmlab/sources.hpp"
#include "sipmlab/waveform.hpp"

namespace sipmlab {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class AcquisitionMode { kGate, kPeakHold };

/// Full experiment description: source, detector, temporal cross talk,
/// acquisition chain, intensity scan and run control.
struct ExperimentConfig {
  SourceSpec source{SourceKind::kCoherent, 12.5, 1.2234};
  DetectorParams detector{};  // eta 0.4, gamma 1, 667 cells, dcr 0 by default
  TemporalCrosstalkParams xt{};
  AcquisitionMode mode = AcquisitionMode::kGate;
  std::vector<double> gates_ns{50.0, 70.0, 100.0, 350.0};
  TraceSpec trace{};
  double laser_time_ns = 1200.0;
  PulseShape shape{};
  double peak_search_ns = 40.0;
  std::vector<double> attenuations{1.0, 0.72, 0.52, 0.37, 0.27, 0.19, 0.14, 0.10};
  std::int64_t trials = 120000;
  std::uint64_t seed = 20260810;
  int jobs = 0;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt_double(v[i]);
  }
  return out;
}

}  // namespace detail

/// Parse the sectioned key = value format into "section.key" -> value.
/// '#' and ';' start comments.
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv[section.empty() ? key : section + "." + key] = val;
  }
  return kv;
}

/// Apply one --set KEY=VALUE override (KEY is section.key).
inline void apply_override(std::map<std::string, std::string>& kv, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("--set expects KEY=VALUE, got '" + assignment + "'");
  kv[detail::trim(assignment.substr(0, eq))] = detail::trim(assignment.substr(eq + 1));
}

/// Build a validated config from key/value pairs. All defaults are filled in
/// first; every constraint violation is collected and reported together.
inline ExperimentConfig validate_config(const std::map<std::string, std::string>& kv) {
  ExperimentConfig cfg;
  std::vector<std::string> errors;
  std::map<std::string, std::string> pending = kv;

  auto take = [&](const char* key) {
    auto it = pending.find(key);
    if (it == pending.end()) return std::string();
    std::string v = it->second;
    pending.erase(it);
    return v;
  };
  auto num = [&](const char* key, double& target) {
    const std::string v = take(key);
    if (v.empty()) return;
    try {
      std::size_t used = 0;
      target = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      errors.push_back(std::string(key) + ": cannot parse '" + v + "' as a number");
    }
  };
  auto integer = [&](const char* key, auto& target) {
    double d = static_cast<double>(target);
    num(key, d);
    target = static_cast<std::decay_t<decltype(target)>>(d);
  };
  auto list = [&](const char* key, std::vector<double>& target) {
    const std::string v = take(key);
    if (v.empty()) return;
    std::vector<double> vals;
    std::istringstream is(v);
    std::string tok;
    while (std::getline(is, tok, ',')) {
      try {
        vals.push_back(std::stod(detail::trim(tok)));
      } catch (const std::exception&) {
        errors.push_back(std::string(key) + ": cannot parse '" + tok + "' as a number");
        return;
      }
    }
    if (!vals.empty()) target = vals;
  };

  const std::string kind = take("source.kind");
  if (!kind.empty()) {
    if (kind == "coherent") cfg.source.kind = SourceKind::kCoherent;
    else if (kind == "thermal") cfg.source.kind = SourceKind::kThermal;
    else errors.push_back("source.kind: expected coherent or thermal, got '" + kind + "'");
  }
  num("source.mean_photons", cfg.source.mean_photons);
  num("source.modes", cfg.source.modes);

  num("detector.eta", cfg.detector.eta);
  num("detector.gamma", cfg.detector.gamma);
  num("detector.gain_spread", cfg.detector.gain_spread);
  num("detector.dcr_hz", cfg.detector.dcr_hz);
  num("detector.eps", cfg.detector.eps);
  num("detector.mean_dc", cfg.detector.mean_dc);
  integer("detector.n_cells", cfg.detector.n_cells);
  {
    const std::string v = take("detector.saturation");
    if (!v.empty()) {
      if (v == "true" || v == "1" || v == "on") cfg.detector.saturation_enabled = true;
      else if (v == "false" || v == "0" || v == "off") cfg.detector.saturation_enabled = false;
      else errors.push_back("detector.saturation: expected true/false, got '" + v + "'");
    }
  }

  num("temporal_xt.eps0", cfg.xt.eps0);
  num("temporal_xt.a", cfg.xt.a);
  num("temporal_xt.tau_xc_ns", cfg.xt.tau_xc_ns);

  const std::string mode = take("acquisition.mode");
  if (!mode.empty()) {
    if (mode == "gate") cfg.mode = AcquisitionMode::kGate;
    else if (mode == "peak-hold") cfg.mode = AcquisitionMode::kPeakHold;
    else errors.push_back("acquisition.mode: expected gate or peak-hold, got '" + mode + "'");
  }
  list("acquisition.gates_ns", cfg.gates_ns);
  num("acquisition.rate_hz", cfg.trace.rate_hz);
  integer("acquisition.bits", cfg.trace.bits);
  num("acquisition.window_ns", cfg.trace.window_ns);
  num("acquisition.laser_time_ns", cfg.laser_time_ns);
  num("acquisition.baseline_sigma", cfg.trace.baseline_sigma);
  num("acquisition.hp_tau_ns", cfg.trace.hp_tau_ns);
  num("acquisition.pretrigger_frac", cfg.trace.pretrigger_frac);
  num("acquisition.full_scale_cells", cfg.trace.full_scale_cells);
  num("acquisition.rise_tau_ns", cfg.shape.rise_tau_ns);
  num("acquisition.fall_tau_ns", cfg.shape.fall_tau_ns);
  num("acquisition.extinction_ns", cfg.shape.extinction_ns);
  num("acquisition.peak_search_ns", cfg.peak_search_ns);

  list("scan.attenuations", cfg.attenuations);

  integer("run.trials", cfg.trials);
  {
    const std::string v = take("run.seed");
    if (!v.empty()) {
      try {
        cfg.seed = std::stoull(v);
      } catch (const std::exception&) {
        errors.push_back("run.seed: cannot parse '" + v + "'");
      }
    }
  }
  integer("run.jobs", cfg.jobs);

  for (const auto& [k, v] : pending) errors.push_back(k + ": unknown key");

  // cross-field constraints, each error naming the offending field(s)
  cfg.trace.gamma = cfg.detector.gamma;
  cfg.trace.gain_spread = cfg.detector.gain_spread;
  if (!(cfg.source.mean_photons >= 0.0))
    errors.push_back("source.mean_photons: must be >= 0");
  if (cfg.source.kind == SourceKind::kThermal && !(cfg.source.modes >= 1.0))
    errors.push_back("source.modes: must be >= 1");
  if (!(cfg.detector.eta >= 0.0 && cfg.detector.eta <= 1.0))
    errors.push_back("detector.eta: outside [0,1]");
  if (!(cfg.detector.eps >= 0.0 && cfg.detector.eps < 1.0))
    errors.push_back("detector.eps: outside [0,1)");
  else if (cfg.detector.eps >= 0.5)
    errors.push_back("detector.eps: outside [0,1) is rejected outright, and values in "
                     "[0.5,1) are refused because the first-order cascade is invalid there");
  if (!(cfg.detector.mean_dc >= 0.0)) errors.push_back("detector.mean_dc: must be >= 0");
  if (!(cfg.detector.dcr_hz >= 0.0)) errors.push_back("detector.dcr_hz: must be >= 0");
  if (!(cfg.detector.gamma > 0.0)) errors.push_back("detector.gamma: must be > 0");
  if (cfg.detector.n_cells <= 0) errors.push_back("detector.n_cells: must be > 0");
  if (!(cfg.xt.eps0 >= 0.0)) errors.push_back("temporal_xt.eps0: must be >= 0");
  if (!(cfg.xt.a >= 0.0)) errors.push_back("temporal_xt.a: must be >= 0");
  if (!(cfg.xt.tau_xc_ns > 0.0)) errors.push_back("temporal_xt.tau_xc_ns: must be > 0");
  if (cfg.trace.bits < 2 || cfg.trace.bits > 16) errors.push_back("acquisition.bits: outside [2,16]");
  if (!(cfg.trace.rate_hz > 0.0)) errors.push_back("acquisition.rate_hz: must be > 0");
  if (!(cfg.trace.window_ns > 0.0)) errors.push_back("acquisition.window_ns: must be > 0");
  if (!(cfg.laser_time_ns >= 0.0 && cfg.laser_time_ns < cfg.trace.window_ns))
    errors.push_back("acquisition.laser_time_ns: outside acquisition.window_ns");
  if (cfg.gates_ns.empty()) errors.push_back("acquisition.gates_ns: empty");
  for (double g : cfg.gates_ns) {
    if (!(g > 0.0)) {
      errors.push_back("acquisition.gates_ns: gate width must be > 0");
      break;
    }
    if (cfg.laser_time_ns + g > cfg.trace.window_ns) {
      errors.push_back("acquisition.gates_ns: gate of " + detail::fmt_double(g) +
                       " ns starting at acquisition.laser_time_ns does not fit in "
                       "acquisition.window_ns");
      break;
    }
  }
  for (double a : cfg.attenuations) {
    if (!(a >= 1e-2 && a <= 1.0)) {
      errors.push_back("scan.attenuations: values must lie in [0.01, 1]");
      break;
    }
  }
  if (cfg.trials < 1) errors.push_back("run.trials: must be >= 1");
  if (cfg.jobs < 0) errors.push_back("run.jobs: must be >= 0");

  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& text,
                                    const std::vector<std::string>& overrides = {}) {
  auto kv = parse_config_text(text);
  for (const auto& o : overrides) apply_override(kv, o);
  return validate_config(kv);
}

/// Canonical text form; validate(parse(normalized)) reproduces the config.
inline std::string normalized_config_text(const ExperimentConfig& c) {
  using detail::fmt_double;
  using detail::fmt_list;
  std::string s;
  s += "[source]\n";
  s += "kind = " + std::string(to_string(c.source.kind)) + "\n";
  s += "mean_photons = " + fmt_double(c.source.mean_photons) + "\n";
  s += "modes = " + fmt_double(c.source.modes) + "\n";
  s += "[detector]\n";
  s += "eta = " + fmt_double(c.detector.eta) + "\n";
  s += "gamma = " + fmt_double(c.detector.gamma) + "\n";
  s += "gain_spread = " + fmt_double(c.detector.gain_spread) + "\n";
  s += "dcr_hz = " + fmt_double(c.detector.dcr_hz) + "\n";
  s += "eps = " + fmt_double(c.detector.eps) + "\n";
  s += "mean_dc = " + fmt_double(c.detector.mean_dc) + "\n";
  s += "n_cells = " + std::to_string(c.detector.n_cells) + "\n";
  s += "saturation = " + std::string(c.detector.saturation_enabled ? "true" : "false") + "\n";
  s += "[temporal_xt]\n";
  s += "eps0 = " + fmt_double(c.xt.eps0) + "\n";
  s += "a = " + fmt_double(c.xt.a) + "\n";
  s += "tau_xc_ns = " + fmt_double(c.xt.tau_xc_ns) + "\n";
  s += "[acquisition]\n";
  s += "mode = " + std::string(c.mode == AcquisitionMode::kGate ? "gate" : "peak-hold") + "\n";
  s += "gates_ns = " + fmt_list(c.gates_ns) + "\n";
  s += "rate_hz = " + fmt_double(c.trace.rate_hz) + "\n";
  s += "bits = " + std::to_string(c.trace.bits) + "\n";
  s += "window_ns = " + fmt_double(c.trace.window_ns) + "\n";
  s += "laser_time_ns = " + fmt_double(c.laser_time_ns) + "\n";
  s += "baseline_sigma = " + fmt_double(c.trace.baseline_sigma) + "\n";
  s += "hp_tau_ns = " + fmt_double(c.trace.hp_tau_ns) + "\n";
  s += "pretrigger_frac = " + fmt_double(c.trace.pretrigger_frac) + "\n";
  s += "full_scale_cells = " + fmt_double(c.trace.full_scale_cells) + "\n";
  s += "rise_tau_ns = " + fmt_double(c.shape.rise_tau_ns) + "\n";
  s += "fall_tau_ns = " + fmt_double(c.shape.fall_tau_ns) + "\n";
  s += "extinction_ns = " + fmt_double(c.shape.extinction_ns) + "\n";
  s += "peak_search_ns = " + fmt_double(c.peak_search_ns) + "\n";
  s += "[scan]\n";
  s += "attenuations = " + fmt_list(c.attenuations) + "\n";
  s += "[run]\n";
  s += "trials = " + std::to_string(c.trials) + "\n";
  s += "seed = " + std::to_string(c.seed) + "\n";
  s += "jobs = " + std::to_string(c.jobs) + "\n";
  return s;
}

inline std::uint64_t fnv1a_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t config_hash(const ExperimentConfig& c) {
  return fnv1a_hash(normalized_config_text(c));
}

}  // namespace sipmlab
