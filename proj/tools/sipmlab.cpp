// Command-line front end: scenario reproduction, standalone simulation, and
// analysis of externally recorded trace dumps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sipmlab/config.hpp"
#include "sipmlab/estimators.hpp"
#include "sipmlab/experiments.hpp"
#include "sipmlab/scenarios.hpp"
#include "sipmlab/trace_io.hpp"
#include "sipmlab/version.hpp"

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitRuntimeError = 3;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  std::int64_t trials = -1;
  std::int64_t seed = -1;
  int jobs = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "configuration file");
  cmd->add_option("--set", args.sets, "override KEY=VALUE (repeatable)")->take_all();
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--trials", args.trials, "number of pulses per run");
  cmd->add_option("--seed", args.seed, "RNG seed");
  cmd->add_option("--jobs", args.jobs, "worker threads (0 = all cores)");
}

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw sipmlab::ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

sipmlab::ExperimentConfig build_config(const CommonArgs& args,
                                       const std::vector<std::string>& scenario_defaults = {}) {
  auto kv = sipmlab::parse_config_text(args.config_path.empty() ? std::string()
                                                                : read_file(args.config_path));
  for (const auto& d : scenario_defaults) {
    const auto eq = d.find('=');
    const std::string key = d.substr(0, eq);
    if (!kv.count(key)) sipmlab::apply_override(kv, d);
  }
  for (const auto& s : args.sets) sipmlab::apply_override(kv, s);
  if (args.trials >= 0) kv["run.trials"] = std::to_string(args.trials);
  if (args.seed >= 0) kv["run.seed"] = std::to_string(args.seed);
  if (args.jobs >= 0) kv["run.jobs"] = std::to_string(args.jobs);
  return sipmlab::validate_config(kv);
}

std::string resolve_out_dir(const CommonArgs& args) {
  if (!args.out_dir.empty()) return args.out_dir;
  if (const char* env = std::getenv("SIPMLAB_OUT")) return env;
  return "out";
}

int cmd_list_scenarios() {
  for (const auto& s : sipmlab::scenario_names()) std::cout << s << "\n";
  return 0;
}

int cmd_validate(const CommonArgs& args) {
  const auto cfg = build_config(args);
  for (const auto& w : cfg.detector.warnings()) std::cerr << "warning: " << w << "\n";
  std::cout << sipmlab::normalized_config_text(cfg);
  return 0;
}

int cmd_reproduce(const CommonArgs& args, const std::string& scenario) {
  const auto cfg = build_config(args, sipmlab::scenario_default_overrides(scenario));
  for (const auto& w : cfg.detector.warnings()) std::cerr << "warning: " << w << "\n";
  const auto bundle = sipmlab::run_scenario(scenario, cfg);
  const std::string out = resolve_out_dir(args);
  sipmlab::write_bundle(bundle, out);
  std::cout << "wrote " << (std::filesystem::path(out) / bundle.scenario).string() << " ("
            << bundle.curves.size() << " curves)\n";
  return 0;
}

// Counts or traces for one source setting, depending on acquisition mode.
int cmd_simulate(const CommonArgs& args, const std::string& format) {
  const auto cfg = build_config(args);
  const std::string out = resolve_out_dir(args);
  std::filesystem::create_directories(out);
  if (format == "counts") {
    const auto photons = sipmlab::sample_shots(
        cfg.source, cfg.trials, sipmlab::stage_seed(cfg.seed, sipmlab::seedtag::kSource),
        cfg.jobs);
    sipmlab::DetectorParams det = cfg.detector;
    const auto detected = sipmlab::mc_detect(
        photons, det, sipmlab::stage_seed(cfg.seed, sipmlab::seedtag::kDetect1), cfg.jobs);
    std::ofstream os(std::filesystem::path(out) / "counts.csv");
    sipmlab::write_shots_csv(os, detected, cfg.source);
    std::cout << "wrote " << (std::filesystem::path(out) / "counts.csv").string() << "\n";
    return 0;
  }
  if (format == "traces") {
    const auto photons = sipmlab::sample_shots(
        cfg.source, cfg.trials, sipmlab::stage_seed(cfg.seed, sipmlab::seedtag::kSource),
        cfg.jobs);
    std::vector<sipmlab::TraceRecord> traces(photons.counts.size());
    const auto ev_seed = sipmlab::stage_seed(cfg.seed, sipmlab::seedtag::kEvents);
    const auto sy_seed = sipmlab::stage_seed(cfg.seed, sipmlab::seedtag::kSynth);
    sipmlab::parallel_for(photons.counts.size(), cfg.jobs,
                          [&](std::size_t begin, std::size_t end) {
                            for (std::size_t i = begin; i < end; ++i) {
                              const auto events = sipmlab::place_events(
                                  photons.counts[i], cfg.detector, cfg.xt, cfg.trace.window_ns,
                                  cfg.laser_time_ns, sipmlab::mix64(ev_seed + i));
                              traces[i] = sipmlab::synth_trace(events, cfg.shape, cfg.trace,
                                                               sipmlab::mix64(sy_seed + i));
                            }
                          });
    const auto path = std::filesystem::path(out) / "traces.bin";
    sipmlab::write_traces(path.string(), traces);
    std::cout << "wrote " << path.string() << " (" << traces.size() << " traces)\n";
    return 0;
  }
  throw sipmlab::ConfigError("simulate: format must be counts or traces, got '" + format + "'");
}

// Gate-integrate (or peak-extract) an external dump, fit the charge scale,
// classify counts, report moments and pmf.
int cmd_analyze(const CommonArgs& args, const std::string& dump_path) {
  const auto cfg = build_config(args);
  const auto traces = sipmlab::read_traces(dump_path);
  if (traces.empty()) throw std::runtime_error("analyze: no traces in " + dump_path);
  std::vector<double> values(traces.size());
  const bool peak_mode = cfg.mode == sipmlab::AcquisitionMode::kPeakHold;
  const double gate_start = cfg.laser_time_ns;
  const double gate_width = peak_mode ? cfg.peak_search_ns : cfg.gates_ns.front();
  for (std::size_t i = 0; i < traces.size(); ++i) {
    sipmlab::GateSpec gate{gate_start, std::min(gate_width, traces[i].window_ns - gate_start)};
    values[i] = peak_mode ? sipmlab::peak_hold(traces[i], gate)
                          : sipmlab::gate_integrate(traces[i], gate);
  }
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double bin = std::max((*mx - *mn) / 400.0, 1e-12);
  const auto spectrum = sipmlab::build_spectrum(values, bin);
  const auto gamma_fit = sipmlab::fit_gamma(spectrum);
  const double gamma = gamma_fit.value("gamma");
  const auto ks = sipmlab::assign_k_shots(values, gamma, 0.0);
  const double mean = sipmlab::sample_mean(ks.counts);
  const double var = sipmlab::sample_variance(ks.counts);

  sipmlab::ordered_json doc;
  doc["traces"] = traces.size();
  doc["gate_start_ns"] = gate_start;
  doc["gate_width_ns"] = gate_width;
  doc["mode"] = peak_mode ? "peak-hold" : "gate";
  doc["gamma"] = gamma;
  doc["gamma_fit"] = sipmlab::detail::fit_to_json(gamma_fit);
  doc["mean_k"] = mean;
  doc["variance_k"] = var;
  doc["fano"] = var / mean;
  int kmax = 0;
  for (int c : ks.counts) kmax = std::max(kmax, c);
  std::vector<double> freq(static_cast<std::size_t>(kmax) + 1, 0.0);
  for (int c : ks.counts) ++freq[static_cast<std::size_t>(c)];
  sipmlab::ordered_json pmf = sipmlab::ordered_json::array();
  for (double f : freq) pmf.push_back(f / static_cast<double>(ks.counts.size()));
  doc["pmf"] = pmf;

  const std::string out = resolve_out_dir(args);
  std::filesystem::create_directories(out);
  const auto path = std::filesystem::path(out) / "analysis.json";
  std::ofstream os(path);
  os << doc.dump(2) << "\n";
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SiPM photon-counting simulator and fitting toolkit"};
  app.set_version_flag("--version", sipmlab::kVersion);
  app.require_subcommand(1);

  CommonArgs args;
  std::string scenario, format = "counts", dump_path;

  auto* list = app.add_subcommand("list-scenarios", "list builtin scenarios");
  auto* validate = app.add_subcommand("validate", "validate and echo the normalized config");
  add_common(validate, args);
  auto* reproduce = app.add_subcommand("reproduce", "run a builtin scenario");
  reproduce->add_option("scenario", scenario, "scenario name")->required();
  add_common(reproduce, args);
  auto* simulate = app.add_subcommand("simulate", "simulate counts or traces");
  simulate->add_option("--format", format, "counts | traces");
  add_common(simulate, args);
  auto* analyze = app.add_subcommand("analyze", "analyze a binary trace dump");
  analyze->add_option("dump", dump_path, "trace dump path")->required();
  add_common(analyze, args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (list->parsed()) return cmd_list_scenarios();
    if (validate->parsed()) return cmd_validate(args);
    if (reproduce->parsed()) return cmd_reproduce(args, scenario);
    if (simulate->parsed()) return cmd_simulate(args, format);
    if (analyze->parsed()) return cmd_analyze(args, dump_path);
  } catch (const sipmlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
  return 0;
}
