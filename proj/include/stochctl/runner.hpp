#pragma once

// Configuration, orchestration and persistence behind the command-line tool.
//
// A run is described by one JSON document (see RunConfig::defaults for every
// key). Reports are deterministic for a given (config, seed); wall-clock
// timings live under the separate "timings" key. Artifacts are named
// <command>-<config hash>[-<n>].<ext> and never overwrite existing files.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stochctl/actuator.hpp"
#include "stochctl/error.hpp"
#include "stochctl/observability.hpp"

namespace stochctl {

inline constexpr const char* kReportSchema = "stochctl.run_report/1";

struct RunConfig {
  BoxDomain domain;
  int modes = 6;
  int steps = 6;
  double horizon = 1.0;
  std::vector<double> noise;             // one value per step
  Propagator propagator = Propagator::ImplicitEuler;
  std::vector<Interval> window;
  std::vector<Box> region;
  std::array<int, 2> cells{8, 1};
  double alpha = 0.25;
  std::vector<double> theta;             // empty: uniform α
  std::vector<double> y0;                // padded with zeros up to J
  TerminalSpec terminal;

  std::vector<double> epsilon_schedule{1e-4, 1e-6, 1e-8, 1e-10};
  double tol = 1e-10;
  int max_iter = 5000;
  bool dense = false;
  int restarts = 8;
  int l1_iterations = 200;
  double l2_tol = 1e-10;
  PlacementMethod method = PlacementMethod::ProjectedGradient;
  int optimizer_max_iter = 500;
  double optimizer_tol = 1e-10;
  double nash_tol = 1e-4;
  int probes = 100;

  double cutoff = 0.0;
  int t_index = 0;
  bool telescoping = false;
  double telescoping_anchor = 0.25;
  double telescoping_start = 0.75;
  double telescoping_C = 1.0;
  int telescoping_count = 8;

  int samples = 20;
  std::vector<double> sweep_fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

  std::uint64_t seed = 1;

  static RunConfig defaults();
  /// Missing keys take their defaults; unknown keys and invalid values throw
  /// InvalidConfig (or the more specific region/density/budget kinds).
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
  /// FNV-1a of the canonical JSON dump.
  std::uint64_t hash() const;

  SpectralBasis basis() const;
  Model model(bool corrupt_adjoint = false) const;
  TimeWindow time_window() const;
  Region observation_region() const;
  CellGrid grid() const;
  ActuatorDensity density() const;
  Vector initial_state() const;
};

struct RunOptions {
  std::string out_dir = "out";
  std::string format = "json";  ///< json | csv
  std::optional<std::uint64_t> seed;
  bool corrupt_adjoint = false;
  int threads = 1;              ///< from STOCHCTL_THREADS
  bool write = true;            ///< persist artifacts
};

struct RunResult {
  int exit_code = 0;
  nlohmann::json report;
  std::vector<std::string> artifacts;
};

/// 0 pass, 1 invariant failure, 2 config, 3 degenerate observation,
/// 4 linear solver, 5 optimizer.
int exit_code_for(ErrorKind kind);

/// Runs one of observability, hum, optimize, verify, sweep.
RunResult run_command(const std::string& command, const RunConfig& config,
                      const RunOptions& options);

/// Reads STOCHCTL_THREADS (default 1, clamped to [1, 64]).
int threads_from_environment();

/// Step plot (1D) or heatmap (2D) of a density.
std::string density_svg(const ActuatorDensity& density);

}  // namespace stochctl
