#include "stochctl/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace stochctl {

using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  require(obj.is_object(), ErrorKind::InvalidConfig, where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : obj.items()) {
    require(ok.count(item.key()) > 0, ErrorKind::InvalidConfig,
            "unknown key '" + item.key() + "' in " + where);
  }
}

template <class T>
void read(const json& obj, const char* key, T& dst, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    dst = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad value for '") + key + "' in " + where);
  }
}

std::vector<double> pad(const std::vector<double>& v, int n) {
  std::vector<double> out(v);
  out.resize(std::max<std::size_t>(n, v.size()), 0.0);
  return out;
}

std::string hex(std::uint64_t h) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

json box_json(const Box& b, int dims) {
  json lo = json::array(), hi = json::array();
  for (int d = 0; d < dims; ++d) {
    lo.push_back(b.lo[d]);
    hi.push_back(b.hi[d]);
  }
  return {{"lo", lo}, {"hi", hi}};
}

std::string terminal_kind(TerminalSpec::Kind k) {
  switch (k) {
    case TerminalSpec::Kind::Deterministic:
      return "deterministic";
    case TerminalSpec::Kind::Gaussian:
      return "gaussian";
    case TerminalSpec::Kind::BrownianMode:
      return "brownian_mode";
  }
  return "gaussian";
}

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.domain.dims = 1;
  c.domain.lengths = {kPi, 1.0};
  c.noise.assign(c.steps, 0.5);
  c.window = {{0.0, c.horizon}};
  Box half;
  half.hi = {kPi / 2, 1.0};
  c.region = {half};
  c.y0 = {1.0, 0.5, 0.25};
  c.terminal.kind = TerminalSpec::Kind::Gaussian;
  return c;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c = defaults();
  check_keys(j, {"domain", "modes", "tree", "noise", "propagator", "window", "region", "density",
                 "y0", "terminal", "solver", "observability", "verify", "sweep", "seed"},
             "config");
  if (j.contains("domain")) {
    const json& d = j.at("domain");
    check_keys(d, {"dims", "lengths"}, "domain");
    read(d, "dims", c.domain.dims, "domain");
    std::vector<double> lengths;
    read(d, "lengths", lengths, "domain");
    if (!lengths.empty()) {
      require(static_cast<int>(lengths.size()) == c.domain.dims, ErrorKind::InvalidConfig,
              "domain.lengths must have one entry per dimension");
      c.domain.lengths = {lengths[0], lengths.size() > 1 ? lengths[1] : 1.0};
    }
    // A changed domain invalidates the default observation region.
    Box half;
    half.hi = {c.domain.lengths[0] / 2, c.domain.lengths[1]};
    c.region = {half};
  }
  read(j, "modes", c.modes, "config");
  if (j.contains("tree")) {
    const json& t = j.at("tree");
    check_keys(t, {"steps", "horizon"}, "tree");
    read(t, "steps", c.steps, "tree");
    read(t, "horizon", c.horizon, "tree");
    c.window = {{0.0, c.horizon}};
  }
  if (j.contains("noise")) {
    const json& n = j.at("noise");
    if (n.is_number()) {
      c.noise.assign(std::max(c.steps, 0), n.get<double>());
    } else {
      read(j, "noise", c.noise, "config");
    }
  } else {
    c.noise.assign(std::max(c.steps, 0), 0.5);
  }
  if (j.contains("propagator")) {
    std::string p;
    read(j, "propagator", p, "config");
    c.propagator = parse_propagator(p);
  }
  if (j.contains("window")) {
    std::vector<std::vector<double>> w;
    read(j, "window", w, "config");
    c.window.clear();
    for (const auto& iv : w) {
      require(iv.size() == 2, ErrorKind::InvalidConfig, "window intervals are [lo, hi] pairs");
      c.window.push_back({iv[0], iv[1]});
    }
  }
  if (j.contains("region")) {
    const json& r = j.at("region");
    require(r.is_array(), ErrorKind::InvalidConfig, "region must be a list of boxes");
    c.region.clear();
    for (const json& b : r) {
      check_keys(b, {"lo", "hi"}, "region box");
      std::vector<double> lo, hi;
      read(b, "lo", lo, "region box");
      read(b, "hi", hi, "region box");
      require(static_cast<int>(lo.size()) == c.domain.dims &&
                  static_cast<int>(hi.size()) == c.domain.dims,
              ErrorKind::InvalidRegion, "region box corners need one entry per dimension");
      Box box;
      for (int d = 0; d < c.domain.dims; ++d) {
        box.lo[d] = lo[d];
        box.hi[d] = hi[d];
      }
      c.region.push_back(box);
    }
  }
  if (j.contains("density")) {
    const json& d = j.at("density");
    check_keys(d, {"cells", "alpha", "theta"}, "density");
    std::vector<int> cells;
    read(d, "cells", cells, "density");
    if (!cells.empty()) {
      require(static_cast<int>(cells.size()) == c.domain.dims, ErrorKind::InvalidConfig,
              "density.cells must have one entry per dimension");
      c.cells = {cells[0], cells.size() > 1 ? cells[1] : 1};
    }
    read(d, "alpha", c.alpha, "density");
    if (d.contains("theta") && !d.at("theta").is_null()) read(d, "theta", c.theta, "density");
  }
  read(j, "y0", c.y0, "config");
  if (j.contains("terminal")) {
    const json& t = j.at("terminal");
    check_keys(t, {"kind", "sigma", "mode", "vector"}, "terminal");
    std::string kind = terminal_kind(c.terminal.kind);
    read(t, "kind", kind, "terminal");
    c.terminal.kind = TerminalSpec::parse(kind).kind;
    read(t, "sigma", c.terminal.sigma, "terminal");
    read(t, "mode", c.terminal.mode, "terminal");
    std::vector<double> v;
    read(t, "vector", v, "terminal");
    c.terminal.vector = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  if (j.contains("solver")) {
    const json& s = j.at("solver");
    check_keys(s, {"epsilon_schedule", "tol", "max_iter", "dense", "restarts", "l1_iterations",
                   "l2_tol", "method", "optimizer_max_iter", "optimizer_tol", "nash_tol",
                   "probes"},
               "solver");
    read(s, "epsilon_schedule", c.epsilon_schedule, "solver");
    read(s, "tol", c.tol, "solver");
    read(s, "max_iter", c.max_iter, "solver");
    read(s, "dense", c.dense, "solver");
    read(s, "restarts", c.restarts, "solver");
    read(s, "l1_iterations", c.l1_iterations, "solver");
    read(s, "l2_tol", c.l2_tol, "solver");
    if (s.contains("method")) {
      std::string m;
      read(s, "method", m, "solver");
      c.method = parse_method(m);
    }
    read(s, "optimizer_max_iter", c.optimizer_max_iter, "solver");
    read(s, "optimizer_tol", c.optimizer_tol, "solver");
    read(s, "nash_tol", c.nash_tol, "solver");
    read(s, "probes", c.probes, "solver");
  }
  if (j.contains("observability")) {
    const json& o = j.at("observability");
    check_keys(o, {"cutoff", "t_index", "telescoping"}, "observability");
    read(o, "cutoff", c.cutoff, "observability");
    read(o, "t_index", c.t_index, "observability");
    if (o.contains("telescoping")) {
      const json& t = o.at("telescoping");
      check_keys(t, {"enabled", "anchor", "start", "C", "count"}, "observability.telescoping");
      read(t, "enabled", c.telescoping, "telescoping");
      read(t, "anchor", c.telescoping_anchor, "telescoping");
      read(t, "start", c.telescoping_start, "telescoping");
      read(t, "C", c.telescoping_C, "telescoping");
      read(t, "count", c.telescoping_count, "telescoping");
    }
  }
  if (j.contains("verify")) {
    check_keys(j.at("verify"), {"samples"}, "verify");
    read(j.at("verify"), "samples", c.samples, "verify");
  }
  if (j.contains("sweep")) {
    check_keys(j.at("sweep"), {"fractions"}, "sweep");
    read(j.at("sweep"), "fractions", c.sweep_fractions, "sweep");
  }
  read(j, "seed", c.seed, "config");
  c.validate();
  return c;
}

json RunConfig::to_json() const {
  json lengths = json::array();
  for (int d = 0; d < domain.dims; ++d) lengths.push_back(domain.lengths[d]);
  json win = json::array();
  for (const Interval& iv : window) win.push_back({iv.lo, iv.hi});
  json reg = json::array();
  for (const Box& b : region) reg.push_back(box_json(b, domain.dims));
  json cells_j = json::array();
  for (int d = 0; d < domain.dims; ++d) cells_j.push_back(cells[d]);
  json tvec = json::array();
  for (Eigen::Index i = 0; i < terminal.vector.size(); ++i) tvec.push_back(terminal.vector(i));
  return {
      {"domain", {{"dims", domain.dims}, {"lengths", lengths}}},
      {"modes", modes},
      {"tree", {{"steps", steps}, {"horizon", horizon}}},
      {"noise", noise},
      {"propagator", to_string(propagator)},
      {"window", win},
      {"region", reg},
      {"density", {{"cells", cells_j}, {"alpha", alpha}, {"theta", theta.empty() ? json(nullptr) : json(theta)}}},
      {"y0", y0},
      {"terminal",
       {{"kind", terminal_kind(terminal.kind)},
        {"sigma", terminal.sigma},
        {"mode", terminal.mode},
        {"vector", tvec}}},
      {"solver",
       {{"epsilon_schedule", epsilon_schedule},
        {"tol", tol},
        {"max_iter", max_iter},
        {"dense", dense},
        {"restarts", restarts},
        {"l1_iterations", l1_iterations},
        {"l2_tol", l2_tol},
        {"method", to_string(method)},
        {"optimizer_max_iter", optimizer_max_iter},
        {"optimizer_tol", optimizer_tol},
        {"nash_tol", nash_tol},
        {"probes", probes}}},
      {"observability",
       {{"cutoff", cutoff},
        {"t_index", t_index},
        {"telescoping",
         {{"enabled", telescoping},
          {"anchor", telescoping_anchor},
          {"start", telescoping_start},
          {"C", telescoping_C},
          {"count", telescoping_count}}}}},
      {"verify", {{"samples", samples}}},
      {"sweep", {{"fractions", sweep_fractions}}},
      {"seed", seed},
  };
}

void RunConfig::validate() const {
  domain.validate();
  require(modes >= 1 && modes <= 256, ErrorKind::InvalidConfig, "modes must be in 1..256");
  require(horizon > 0.0 && std::isfinite(horizon), ErrorKind::InvalidConfig,
          "tree.horizon must be positive");
  const FiltrationTree tree(steps, horizon);
  require(static_cast<int>(noise.size()) == steps, ErrorKind::InvalidConfig,
          "noise needs one value per tree step");
  for (double a : noise) {
    require(std::isfinite(a), ErrorKind::InvalidConfig, "noise values must be finite");
  }
  require(!window.empty(), ErrorKind::InvalidConfig, "observation window must not be empty");
  const TimeWindow w = time_window();
  require(w.measure() > 0.0, ErrorKind::InvalidConfig, "observation window has zero measure");
  require(!region.empty(), ErrorKind::InvalidRegion, "observation region must not be empty");
  observation_region();
  require(static_cast<int>(y0.size()) <= modes, ErrorKind::InvalidConfig,
          "y0 has more entries than modes");
  density();
  require(!epsilon_schedule.empty(), ErrorKind::InvalidConfig, "epsilon schedule is empty");
  for (double e : epsilon_schedule) {
    require(e >= 0.0 && std::isfinite(e), ErrorKind::InvalidConfig, "epsilon must be >= 0");
  }
  require(tol > 0.0 && l2_tol > 0.0 && optimizer_tol > 0.0 && nash_tol > 0.0,
          ErrorKind::InvalidConfig, "tolerances must be positive");
  require(max_iter >= 1 && optimizer_max_iter >= 0 && restarts >= 1 && l1_iterations >= 0 &&
              probes >= 0 && samples >= 1,
          ErrorKind::InvalidConfig, "iteration counts must be positive");
  require(cutoff >= 0.0, ErrorKind::InvalidConfig, "decay cutoff must be >= 0");
  require(t_index >= 0 && t_index < steps, ErrorKind::InvalidConfig,
          "t_index must be below the number of steps");
  require(terminal.mode >= 0 && terminal.mode < modes, ErrorKind::InvalidConfig,
          "terminal.mode out of range");
  for (double f : sweep_fractions) {
    require(f > 0.0 && f <= 1.0, ErrorKind::InvalidConfig, "sweep fractions must lie in (0, 1]");
  }
}

std::uint64_t RunConfig::hash() const {
  const std::string s = to_json().dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

SpectralBasis RunConfig::basis() const { return build_basis(domain, modes); }

Model RunConfig::model(bool corrupt_adjoint) const {
  Model m(basis(), FiltrationTree(steps, horizon), NoiseCoefficient(noise), propagator);
  m.set_corrupt_adjoint(corrupt_adjoint);
  return m;
}

TimeWindow RunConfig::time_window() const { return TimeWindow(window, horizon); }

Region RunConfig::observation_region() const { return Region(domain, region); }

CellGrid RunConfig::grid() const { return CellGrid(domain, cells); }

ActuatorDensity RunConfig::density() const {
  const CellGrid g = grid();
  if (theta.empty()) return ActuatorDensity::uniform(g, alpha);
  return ActuatorDensity(g, Eigen::Map<const Vector>(theta.data(), theta.size()), alpha);
}

Vector RunConfig::initial_state() const {
  const std::vector<double> v = pad(y0, modes);
  return Eigen::Map<const Vector>(v.data(), modes);
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidRegion:
    case ErrorKind::InvalidDensity:
    case ErrorKind::InvalidBudget:
      return 2;
    case ErrorKind::DegenerateObservation:
      return 3;
    case ErrorKind::IterationLimit:
      return 4;
    case ErrorKind::OptimizerFailure:
      return 5;
    case ErrorKind::InternalConsistency:
      return 1;
  }
  return 1;
}

int threads_from_environment() {
  const char* v = std::getenv("STOCHCTL_THREADS");
  if (v == nullptr) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (end == v || *end != '\0' || n < 1) return 1;
  return static_cast<int>(std::min(n, 64L));
}

std::string density_svg(const ActuatorDensity& density) {
  const CellGrid& grid = density.grid();
  const Vector& th = density.theta();
  std::ostringstream s;
  s.precision(6);
  const int w = 640, h = 320, m = 40;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << m << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">theta, alpha = "
    << density.alpha() << "</text>\n";
  const double pw = w - 2 * m, ph = h - 2 * m;
  if (grid.domain().dims == 1) {
    const int C = grid.size();
    s << "<rect x=\"" << m << "\" y=\"" << m << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#888\"/>\n<path d=\"";
    for (int c = 0; c < C; ++c) {
      const double x0 = m + pw * c / C, x1 = m + pw * (c + 1) / C;
      const double y = m + ph * (1.0 - th(c));
      s << (c == 0 ? "M" : "L") << x0 << ',' << y << " L" << x1 << ',' << y << ' ';
    }
    s << "\" fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"2\"/>\n";
    s << "<text x=\"4\" y=\"" << m + 4 << "\" font-size=\"11\">1</text>\n";
    s << "<text x=\"4\" y=\"" << m + ph << "\" font-size=\"11\">0</text>\n";
  } else {
    const int nx = grid.counts()[0], ny = grid.counts()[1];
    const double cw = pw / nx, ch = ph / ny;
    for (int c = 0; c < grid.size(); ++c) {
      const int ix = c % nx, iy = c / nx;
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - th(c))));
      s << "<rect x=\"" << m + ix * cw << "\" y=\"" << m + (ny - 1 - iy) * ch << "\" width=\"" << cw
        << "\" height=\"" << ch << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\" stroke=\"#ccc\"/>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

namespace {

struct Suite {
  bool pass = true;
  json detail = json::object();
};

class Session {
 public:
  Session(std::string command, const RunConfig& config, const RunOptions& options)
      : command_(std::move(command)), config_(config), options_(options) {
    if (options_.seed) config_.seed = *options_.seed;
    hash_ = config_.hash();
  }

  RunConfig& config() { return config_; }
  const RunOptions& options() const { return options_; }
  json& results() { return results_; }
  void suite(const std::string& name, const Suite& s) {
    suites_[name] = {{"pass", s.pass}, {"detail", s.detail}};
    if (!s.pass) failed_ = true;
  }
  bool failed() const { return failed_; }

  /// Reserves the artifact stem on first use.
  std::string path(const std::string& suffix) {
    namespace fs = std::filesystem;
    if (stem_.empty()) {
      fs::create_directories(options_.out_dir);
      const std::string base = command_ + "-" + hex(hash_);
      for (int n = 0;; ++n) {
        const std::string cand = n == 0 ? base : base + "-" + std::to_string(n);
        bool taken = false;
        for (const auto& entry : fs::directory_iterator(options_.out_dir)) {
          const std::string name = entry.path().filename().string();
          if (name.rfind(cand + ".", 0) == 0 || name.rfind(cand + "_", 0) == 0) {
            taken = true;
            break;
          }
        }
        if (!taken) {
          stem_ = (fs::path(options_.out_dir) / cand).string();
          break;
        }
      }
    }
    return stem_ + suffix;
  }

  void write(const std::string& suffix, const std::string& content) {
    if (!options_.write) return;
    const std::string p = path(suffix);
    std::ofstream f(p, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::InvalidConfig, "cannot write artifact " + p);
    f << content;
    artifacts_.push_back(p);
  }

  RunResult finish(int exit_code, double seconds) {
    RunResult r;
    r.exit_code = exit_code;
    r.report = {{"schema", kReportSchema},
                {"command", command_},
                {"config_hash", hex(hash_)},
                {"seed", config_.seed},
                {"config", config_.to_json()},
                {"results", results_},
                {"suites", suites_},
                {"exit_code", exit_code}};
    if (!error_.is_null()) r.report["error"] = error_;
    if (options_.write) {
      std::string body;
      if (options_.format == "csv") {
        std::ostringstream s;
        s.precision(17);
        s << "key,value\n";
        flatten(s, "", r.report);
        body = s.str();
      } else {
        body = r.report.dump(2) + "\n";
      }
      write(options_.format == "csv" ? "_report.csv" : "_report.json", body);
      json timing = {{"total_seconds", seconds}};
      write("_timings.json", timing.dump(2) + "\n");
    }
    r.report["timings"] = {{"total_seconds", seconds}};
    r.artifacts = artifacts_;
    return r;
  }

  void set_error(const Error& e) {
    error_ = {{"kind", to_string(e.kind())}, {"message", e.what()}, {"value", e.value()}};
  }

 private:
  static void flatten(std::ostream& s, const std::string& prefix, const json& j) {
    if (j.is_object()) {
      for (const auto& item : j.items()) {
        flatten(s, prefix.empty() ? item.key() : prefix + "." + item.key(), item.value());
      }
    } else if (j.is_array()) {
      if (std::all_of(j.begin(), j.end(), [](const json& e) { return e.is_primitive(); })) {
        s << prefix << ',';
        for (std::size_t i = 0; i < j.size(); ++i) s << (i ? ";" : "") << j[i].dump();
        s << '\n';
      } else {
        for (std::size_t i = 0; i < j.size(); ++i) flatten(s, prefix + "." + std::to_string(i), j[i]);
      }
    } else {
      s << prefix << ',' << (j.is_string() ? j.get<std::string>() : j.dump()) << '\n';
    }
  }

  std::string command_;
  RunConfig config_;
  RunOptions options_;
  std::uint64_t hash_ = 0;
  std::string stem_;
  json results_ = json::object();
  json suites_ = json::object();
  json error_;
  bool failed_ = false;
  std::vector<std::string> artifacts_;
};

HumOptions hum_options(const RunConfig& c) {
  HumOptions h;
  h.epsilon_schedule = c.epsilon_schedule;
  h.tol = c.tol;
  h.max_iter = c.max_iter;
  h.dense = c.dense;
  return h;
}

json l2_json(const L2Constant& l2) {
  return {{"c_l2", l2.constant},
          {"iterations", l2.iterations},
          {"inner_iterations", l2.inner_iterations},
          {"converged", l2.converged}};
}

void cmd_observability(Session& s) {
  const RunConfig& c = s.config();
  const Model model = c.model(s.options().corrupt_adjoint);
  const Region region = c.observation_region();
  const Matrix w = gram(model.basis(), region);
  const TimeWindow window = c.time_window();

  const TerminalData eta = sample_terminal(c.seed, c.terminal, model.tree(), model.modes());
  const DecayCheck decay = check_decay(eta, c.cutoff, model);
  const InterpolationResult interp = check_interpolation(eta, w, c.t_index, model);
  const GramOperator op(model, w, window);
  const L2Constant l2 = l2_observability_constant(op, c.l2_tol);
  L1Options l1o;
  l1o.restarts = c.restarts;
  l1o.iterations = c.l1_iterations;
  l1o.seed = c.seed;
  const L1Constant l1 = l1_observability_constant(op, l1o);
  const double spectral =
      spectral_inequality_constant(model.basis(), region, model.basis().eigenvalues().maxCoeff());

  json& r = s.results();
  r["c_l2"] = l2.constant;
  r["c_l1_lower"] = l1.lower_bound;
  r["k_interp"] = interp.k_star;
  r["interp_ratio"] = interp.ratio;
  r["decay_margin"] = decay.margin;
  r["decay_violations"] = decay.violations;
  r["spectral_constant"] = spectral;
  r["l2"] = l2_json(l2);
  r["l1"] = {{"evaluations", l1.evaluations}, {"discarded", l1.discarded}};
  r["metadata"] = {{"modes", model.modes()},
                   {"steps", model.steps()},
                   {"tau", model.noise().tau()},
                   {"region_measure", region.measure()},
                   {"window_measure", window.measure()},
                   {"propagator", to_string(model.propagator())}};

  Suite ds;
  ds.pass = decay.violations == 0;
  ds.detail = {{"margin", decay.margin}, {"worst_level", decay.worst_level}};
  s.suite("decay", ds);

  if (c.telescoping) {
    const TelescopingSequence seq = build_telescoping(c.telescoping_anchor, c.telescoping_start,
                                                      c.telescoping_C, c.telescoping_count, c.horizon);
    const TelescopingCheck tc = check_telescoping(seq, &window, 1.0 / 3.0);
    r["telescoping"] = {{"q", seq.contraction}, {"l", seq.l}, {"tau", seq.tau}};
    Suite ts;
    ts.pass = tc.ordered && tc.gaps_ok && tc.window_density_ok;
    ts.detail = {{"max_gap_error", tc.max_gap_error}, {"min_density_ratio", tc.min_density_ratio}};
    s.suite("telescoping", ts);
  }

  std::ostringstream csv;
  csv.precision(17);
  csv << "quantity,value\n"
      << "c_l2," << l2.constant << "\nc_l1_lower," << l1.lower_bound << "\nk_interp,"
      << interp.k_star << "\ndecay_margin," << decay.margin << "\ndecay_violations,"
      << decay.violations << "\nspectral_constant," << spectral << '\n';
  s.write("_constants.csv", csv.str());
  std::ostringstream gcsv;
  write_gram_csv(gcsv, model.basis(), w);
  s.write("_gram.csv", gcsv.str());
}

void cmd_hum(Session& s) {
  const RunConfig& c = s.config();
  const Model model = c.model(s.options().corrupt_adjoint);
  const ActuatorDensity density = c.density();
  const Matrix b = density.multiplier(cell_grams(model.basis(), density.grid()));
  const GramOperator op(model, b, c.time_window());
  const Vector y0 = c.initial_state();
  HumOptions h = hum_options(c);
  std::vector<double> history;
  h.history = &history;
  HumSolution sol;
  try {
    sol = solve_hum(y0, op, h);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::IterationLimit) {
      std::ostringstream csv;
      csv.precision(17);
      csv << "iteration,relative_residual\n";
      for (std::size_t i = 0; i < history.size(); ++i) csv << i << ',' << history[i] << '\n';
      s.write("_residuals.csv", csv.str());
    }
    throw;
  }
  const double residual = verify_null_control(sol, y0, op);
  const MinimalNormCheck mn = minimal_norm_over_admissible(sol, op, c.samples, c.seed);

  json& r = s.results();
  r["cost_N"] = sol.cost_N;
  r["value_V"] = sol.value_V;
  r["terminal_residual"] = residual;
  r["el_residual"] = sol.el_residual;
  r["epsilon"] = sol.epsilon;
  r["y0_norm"] = sol.y0_norm;
  r["control_linf"] = sol.control_linf;
  r["iterations"] = sol.iterations;
  r["certification_error"] = op.certification_error();
  r["minimal_norm"] = {{"ok", mn.ok},
                       {"trials", mn.trials},
                       {"skipped", mn.skipped},
                       {"min_cost_increase", mn.min_cost_increase},
                       {"max_orthogonality", mn.max_orthogonality},
                       {"max_null_residual", mn.max_null_residual}};

  Suite nc;
  nc.pass = residual <= 1e-6 * std::max(sol.y0_norm, 1e-300) || sol.y0_norm == 0.0;
  nc.detail = {{"relative_residual", sol.y0_norm > 0 ? residual / sol.y0_norm : 0.0}};
  s.suite("null_control", nc);
  Suite ms;
  ms.pass = mn.ok;
  ms.detail = {{"min_cost_increase", mn.min_cost_increase}};
  s.suite("minimal_norm", ms);

  std::ostringstream hist;
  hist.precision(17);
  hist << "iteration,relative_residual\n";
  for (std::size_t i = 0; i < sol.residual_history.size(); ++i) {
    hist << i << ',' << sol.residual_history[i] << '\n';
  }
  s.write("_residuals.csv", hist.str());
  std::ostringstream traj;
  write_trajectory_csv(traj, sol.u_star, model.tree());
  s.write("_control.csv", traj.str());
}

std::string theta_csv(const ActuatorDensity& d, const Vector* energies) {
  std::ostringstream s;
  s.precision(17);
  s << "cell,x,y,theta" << (energies ? ",energy" : "") << '\n';
  for (int c = 0; c < d.grid().size(); ++c) {
    const auto ctr = d.grid().center(c);
    s << c << ',' << ctr[0] << ',' << (d.grid().domain().dims == 2 ? ctr[1] : 0.0) << ','
      << d.theta()(c);
    if (energies) s << ',' << (*energies)(c);
    s << '\n';
  }
  return s.str();
}

void cmd_optimize(Session& s) {
  const RunConfig& c = s.config();
  const PlacementProblem problem(c.model(s.options().corrupt_adjoint), c.grid(), c.time_window(),
                                 c.initial_state(), c.alpha);
  OptimizeOptions o;
  o.method = c.method;
  o.max_iter = c.optimizer_max_iter;
  o.tol = c.optimizer_tol;
  if (!c.theta.empty()) o.initial = c.density().theta();
  const OptimizeResult opt = optimize_actuator(problem, o);
  json& r = s.results();
  r["N"] = opt.N;
  r["theta"] = vec_json(opt.theta.theta());
  r["iterations"] = opt.iterations;
  r["converged"] = opt.converged;
  r["stationarity"] = opt.stationarity;
  r["history"] = opt.history;
  s.write("_theta.csv", theta_csv(opt.theta, &opt.energies));
  s.write("_theta.svg", density_svg(opt.theta));
  if (opt.inner_failure) {
    throw Error(ErrorKind::OptimizerFailure, opt.failure, opt.N);
  }

  const NashReport nash = check_nash(problem, opt.theta, c.nash_tol, c.probes, c.seed);
  const GameValue game = minimax_gap(problem, opt);
  int fractional = 0;
  for (int i = 0; i < opt.theta.grid().size(); ++i) {
    const double t = opt.theta.theta()(i);
    fractional += t > c.nash_tol && t < 1.0 - c.nash_tol;
  }
  r["fractional_cells"] = fractional;
  r["nash"] = {{"passed", nash.passed},
               {"level", nash.level},
               {"energy_per_cell", vec_json(nash.energy_per_cell)},
               {"value_gap", nash.value_gap},
               {"structure_violation", nash.structure_violation},
               {"el_residual", nash.el_residual},
               {"hum_cost", nash.hum_cost},
               {"swap_probes", nash.swap_probes},
               {"swap_decreases", nash.swap_decreases}};
  r["game"] = {{"u_plus", game.u_plus},
               {"u_minus", game.u_minus},
               {"gap", game.gap},
               {"converged", game.converged},
               {"newton_steps", game.newton_steps},
               {"log", game.log}};
  Suite ns;
  ns.pass = nash.passed;
  s.suite("nash", ns);
  Suite gs;
  const double rel = game.u_plus > 0.0 ? std::abs(game.gap) / game.u_plus : std::abs(game.gap);
  gs.pass = rel <= 1e-3 && game.gap >= -1e-8 * std::max(1.0, game.u_plus);
  gs.detail = {{"relative_gap", rel}};
  s.suite("minimax", gs);
}

Suite guarded(const std::function<Suite()>& f) {
  try {
    return f();
  } catch (const Error& e) {
    Suite s;
    s.pass = false;
    s.detail = {{"error", to_string(e.kind())}, {"message", e.what()}};
    return s;
  }
}

void cmd_verify(Session& s) {
  const RunConfig& c = s.config();
  const bool corrupt = s.options().corrupt_adjoint;
  const Model model = c.model(corrupt);
  const CellGrid grid = c.grid();
  const std::vector<Matrix> grams = cell_grams(model.basis(), grid);
  const int J = model.modes();
  const int K = model.steps();
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto gaussian = [&](Eigen::Index r, Eigen::Index cols) {
    Matrix m(r, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal(rng);
    return m;
  };
  auto random_theta = [&](double alpha) {
    Vector raw(grid.size());
    for (int i = 0; i < grid.size(); ++i) raw(i) = 3.0 * unit(rng) - 1.0;
    return project_onto_theta(raw, alpha, grid);
  };

  s.suite("duality", guarded([&] {
    double worst = 0.0;
    for (int t = 0; t < c.samples; ++t) {
      AdaptedField u(J, K);
      for (int k = 1; k <= K; ++k) u.level(k) = gaussian(J, u.level(k).cols());
      const Matrix b = random_theta(c.alpha).multiplier(grams);
      worst = std::max(worst, duality_identity(gaussian(J, 1).col(0), u, b,
                                               gaussian(J, model.tree().leaves()), model)
                                  .relative);
    }
    Suite r;
    r.pass = worst <= 1e-10;
    r.detail = {{"max_relative_gap", worst}};
    return r;
  }));

  s.suite("decay", guarded([&] {
    int violations = 0;
    double margin = 1e300;
    const double lmax = model.basis().eigenvalues().maxCoeff();
    for (int t = 0; t < c.samples; ++t) {
      std::vector<double> a(K);
      for (double& v : a) v = 4.0 * unit(rng) - 2.0;
      // The inequality is a property of the exact semigroup, reproduced by
      // the exponential propagator.
      const Model m(model.basis(), model.tree(), NoiseCoefficient(a), Propagator::Exponential);
      const DecayCheck d = check_decay(gaussian(J, model.tree().leaves()), lmax * unit(rng), m);
      violations += d.violations > 0;
      margin = std::min(margin, d.margin);
    }
    Suite r;
    r.pass = violations == 0;
    r.detail = {{"violations", violations}, {"min_margin", margin}, {"propagator", "exponential"}};
    return r;
  }));

  s.suite("level_set", guarded([&] {
    int failures = 0;
    for (int t = 0; t < c.samples; ++t) {
      const double alpha = 0.01 + 0.99 * unit(rng);
      const ActuatorDensity d = random_theta(alpha);
      failures += !level_set_bound(grid, d.beta(), alpha).holds;
    }
    Suite r;
    r.pass = failures == 0;
    r.detail = {{"failures", failures}};
    return r;
  }));

  s.suite("value_identity", guarded([&] {
    Suite r;
    if (model.terminal_dim() > 2048) {
      r.detail = {{"skipped", "terminal dimension above the dense limit"}};
      return r;
    }
    double worst = 0.0;
    const int n = std::min(c.samples, 10);
    for (int t = 0; t < n; ++t) {
      const GramOperator op(model, random_theta(c.alpha).multiplier(grams), c.time_window());
      HumOptions h;
      h.dense = true;
      h.epsilon_schedule = {0.0};
      const HumSolution sol = solve_hum(gaussian(J, 1).col(0), op, h);
      worst = std::max(worst, std::abs(sol.value_V + 0.5 * sol.cost_N) / (0.5 * sol.cost_N));
    }
    r.pass = worst <= 1e-8;
    r.detail = {{"max_relative_error", worst}};
    return r;
  }));

  std::optional<PlacementProblem> problem;
  s.suite("convexity", guarded([&] {
    problem.emplace(model, grid, c.time_window(), c.initial_state(), c.alpha);
    double worst = 1e300;
    for (int t = 0; t < c.samples; ++t) {
      const Vector t1 = random_theta(c.alpha).theta();
      const Vector t2 = random_theta(c.alpha).theta();
      worst = std::min(worst, 0.5 * problem->evaluate(t1).N + 0.5 * problem->evaluate(t2).N -
                                  problem->evaluate(0.5 * (t1 + t2)).N);
    }
    Suite r;
    r.pass = worst >= -1e-8;
    r.detail = {{"min_midpoint_slack", worst}};
    return r;
  }));

  s.suite("nash", guarded([&] {
    Suite r;
    if (!problem) {
      r.pass = false;
      r.detail = {{"error", "placement problem unavailable"}};
      return r;
    }
    OptimizeOptions o;
    o.method = c.method;
    o.max_iter = c.optimizer_max_iter;
    o.tol = c.optimizer_tol;
    const OptimizeResult opt = optimize_actuator(*problem, o);
    const NashReport nash = check_nash(*problem, opt.theta, c.nash_tol, c.probes, c.seed);
    r.pass = nash.passed && !opt.inner_failure;
    r.detail = {{"structure_violation", nash.structure_violation},
                {"el_residual", nash.el_residual},
                {"swap_decreases", nash.swap_decreases},
                {"swap_probes", nash.swap_probes}};
    return r;
  }));
}

void cmd_sweep(Session& s) {
  const RunConfig& c = s.config();
  const Model model = c.model(s.options().corrupt_adjoint);
  const TimeWindow window = c.time_window();
  const std::size_t n = c.sweep_fractions.size();
  std::vector<double> constants(n, 0.0), measures(n, 0.0);
  std::vector<int> iterations(n, 0);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t i) {
    try {
      Box b;
      b.hi = {c.sweep_fractions[i] * c.domain.lengths[0], c.domain.lengths[1]};
      const Region region(c.domain, {b});
      measures[i] = region.measure();
      const GramOperator op(model, gram(model.basis(), region), window);
      const L2Constant l2 = l2_observability_constant(op, c.l2_tol);
      constants[i] = l2.constant;
      iterations[i] = l2.iterations;
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const int threads = std::max(1, std::min<int>(s.options().threads, static_cast<int>(n)));
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) work(i);
    });
  }
  for (std::thread& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  bool monotone = true;
  std::ostringstream csv;
  csv.precision(17);
  csv << "fraction,region_measure,c_l2,iterations\n";
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return c.sweep_fractions[a] < c.sweep_fractions[b]; });
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    csv << c.sweep_fractions[i] << ',' << measures[i] << ',' << constants[i] << ',' << iterations[i]
        << '\n';
    if (k > 0 && constants[i] > constants[order[k - 1]] * (1.0 + 1e-8)) monotone = false;
  }
  s.results()["fractions"] = c.sweep_fractions;
  s.results()["c_l2"] = constants;
  s.write("_sweep.csv", csv.str());
  Suite m;
  m.pass = monotone;
  s.suite("monotone_c_l2", m);
}

}  // namespace

RunResult run_command(const std::string& command, const RunConfig& config,
                      const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  Session s(command, config, options);
  require(options.format == "json" || options.format == "csv", ErrorKind::InvalidConfig,
          "format must be json or csv");
  int code = 0;
  try {
    s.config().validate();
    if (command == "observability") {
      cmd_observability(s);
    } else if (command == "hum") {
      cmd_hum(s);
    } else if (command == "optimize") {
      cmd_optimize(s);
    } else if (command == "verify") {
      cmd_verify(s);
    } else if (command == "sweep") {
      cmd_sweep(s);
    } else {
      throw Error(ErrorKind::InvalidConfig, "unknown command '" + command + "'");
    }
    code = s.failed() ? 1 : 0;
  } catch (const Error& e) {
    s.set_error(e);
    code = exit_code_for(e.kind());
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s.finish(code, secs);
}

}  // namespace stochctl
