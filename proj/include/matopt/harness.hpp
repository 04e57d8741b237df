#pragma once

// Training loop, schedules, clipping, parameter reshaping, sweeps, CSV and SVG output.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "matopt/optim.hpp"
#include "matopt/problems.hpp"

namespace matopt {

enum class ReshapeStrategy { Keep, To2D, To1D };
enum class Schedule { WarmupCosine, Constant };
enum class ProblemKind { Quadratic, Logistic, Mlp };

inline constexpr std::size_t kDefaultReshapeCap = 32768;

struct ProblemSpec {
  ProblemKind kind = ProblemKind::Quadratic;
  std::uint64_t seed = 0;
  double noise_std = 0.0;
  // quadratic
  std::size_t rows = 10;
  std::size_t cols = 5;
  double condition = 1e4;
  QuadraticProblem::Structure structure = QuadraticProblem::Structure::Dense;
  // logistic / mlp
  std::size_t samples = 200;
  std::size_t features = 50;
  double feature_condition = 1e4;
  double label_noise = 0.05;
  std::size_t inputs = 8;
  std::size_t hidden = 16;
  std::size_t classes = 3;
};

struct RunConfig {
  ProblemSpec problem;
  OptimizerSpec optimizer;
  std::size_t total_steps = 500;
  double warmup_fraction = 0.1;
  double peak_lr = 0.01;
  Schedule schedule = Schedule::WarmupCosine;
  std::optional<double> clip_norm;
  std::uint64_t seed = 0;
  ReshapeStrategy reshape = ReshapeStrategy::To2D;
  std::size_t reshape_cap = kDefaultReshapeCap;
  std::string output_path;
};

struct TraceRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double update_norm = 0.0;
  double lr = 0.0;
};

// ---------------------------------------------------------------------------
// Names

inline const char* to_string(ReshapeStrategy r) {
  switch (r) {
    case ReshapeStrategy::Keep: return "keep";
    case ReshapeStrategy::To2D: return "to2d";
    case ReshapeStrategy::To1D: return "to1d";
  }
  return "unknown";
}

inline const char* to_string(Schedule s) { return s == Schedule::Constant ? "constant" : "warmup_cosine"; }

inline const char* to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::Quadratic: return "quadratic";
    case ProblemKind::Logistic: return "logistic";
    case ProblemKind::Mlp: return "mlp";
  }
  return "unknown";
}

inline const char* to_string(QuadraticProblem::Structure s) {
  switch (s) {
    case QuadraticProblem::Structure::Dense: return "dense";
    case QuadraticProblem::Structure::Kronecker: return "kronecker";
    case QuadraticProblem::Structure::Diagonal: return "diagonal";
  }
  return "unknown";
}

namespace detail {

template <typename E, std::size_t N>
E parse_enum(const std::string& text, const E (&values)[N], const char* what) {
  for (E v : values)
    if (text == to_string(v)) return v;
  throw Error(ErrorCode::InvalidConfig, std::string("unknown ") + what + ": " + text);
}

}  // namespace detail

inline Family parse_family(const std::string& s) {
  static constexpr Family all[] = {Family::Adam,       Family::Signum,    Family::SignGD,          Family::RMSProp,
                                   Family::SpectralGD, Family::MuonSVD,   Family::MuonNS,          Family::Shampoo,
                                   Family::KlShampoo,  Family::EShampoo,  Family::CenteredShampoo, Family::OneSidedL,
                                   Family::OneSidedR,  Family::FullMatrix, Family::OrderN};
  return detail::parse_enum(s, all, "family");
}
inline Wiring parse_wiring(const std::string& s) {
  static constexpr Wiring all[] = {Wiring::Standard, Wiring::LaProp, Wiring::BCOSm};
  return detail::parse_enum(s, all, "wiring");
}
inline Scaling parse_scaling(const std::string& s) {
  static constexpr Scaling all[] = {Scaling::None,     Scaling::Graft,   Scaling::Classic,
                                    Scaling::Moonlight, Scaling::Nuclear, Scaling::RmsRms};
  return detail::parse_enum(s, all, "scaling");
}
inline ReshapeStrategy parse_reshape(const std::string& s) {
  static constexpr ReshapeStrategy all[] = {ReshapeStrategy::Keep, ReshapeStrategy::To2D, ReshapeStrategy::To1D};
  return detail::parse_enum(s, all, "reshape strategy");
}
inline Schedule parse_schedule(const std::string& s) {
  static constexpr Schedule all[] = {Schedule::WarmupCosine, Schedule::Constant};
  return detail::parse_enum(s, all, "schedule");
}
inline ProblemKind parse_problem_kind(const std::string& s) {
  static constexpr ProblemKind all[] = {ProblemKind::Quadratic, ProblemKind::Logistic, ProblemKind::Mlp};
  return detail::parse_enum(s, all, "problem kind");
}
inline QuadraticProblem::Structure parse_structure(const std::string& s) {
  using S = QuadraticProblem::Structure;
  static constexpr S all[] = {S::Dense, S::Kronecker, S::Diagonal};
  return detail::parse_enum(s, all, "structure");
}

// ---------------------------------------------------------------------------
// Settings addressed by dotted key ("optimizer.beta1", "run.peak_lr", ...)

struct ConfigValue {
  std::variant<double, bool, std::string> value;

  ConfigValue() = default;
  ConfigValue(double d) : value(d) {}
  ConfigValue(int i) : value(static_cast<double>(i)) {}
  ConfigValue(bool b) : value(b) {}
  ConfigValue(std::string s) : value(std::move(s)) {}
  ConfigValue(const char* s) : value(std::string(s)) {}

  double as_real(const std::string& key) const {
    if (const double* d = std::get_if<double>(&value)) return *d;
    throw Error(ErrorCode::InvalidConfig, key + ": expected a number");
  }
  std::size_t as_count(const std::string& key) const {
    const double d = as_real(key);
    if (d < 0 || d != std::floor(d) || d > 9.0e15) throw Error(ErrorCode::InvalidConfig, key + ": expected a non-negative integer");
    return static_cast<std::size_t>(d);
  }
  bool as_bool(const std::string& key) const {
    if (const bool* b = std::get_if<bool>(&value)) return *b;
    throw Error(ErrorCode::InvalidConfig, key + ": expected true or false");
  }
  const std::string& as_text(const std::string& key) const {
    if (const std::string* s = std::get_if<std::string>(&value)) return *s;
    throw Error(ErrorCode::InvalidConfig, key + ": expected a string");
  }
  std::string to_text() const {
    if (const double* d = std::get_if<double>(&value)) {
      char buf[32];
      for (int digits = 15; digits <= 17; ++digits) {  // shortest form that round-trips
        std::snprintf(buf, sizeof buf, "%.*g", digits, *d);
        if (std::strtod(buf, nullptr) == *d) break;
      }
      return buf;
    }
    if (const bool* b = std::get_if<bool>(&value)) return *b ? "true" : "false";
    return std::get<std::string>(value);
  }
  bool operator==(const ConfigValue&) const = default;
};

inline void apply_setting(RunConfig& c, const std::string& key, const ConfigValue& v) {
  OptimizerSpec& o = c.optimizer;
  ProblemSpec& p = c.problem;
  // run
  if (key == "run.total_steps") c.total_steps = v.as_count(key);
  else if (key == "run.warmup_fraction") c.warmup_fraction = v.as_real(key);
  else if (key == "run.peak_lr") c.peak_lr = v.as_real(key);
  else if (key == "run.schedule") c.schedule = parse_schedule(v.as_text(key));
  else if (key == "run.clip_norm") c.clip_norm = v.as_real(key);
  else if (key == "run.seed") c.seed = v.as_count(key);
  else if (key == "run.reshape") c.reshape = parse_reshape(v.as_text(key));
  else if (key == "run.reshape_cap") c.reshape_cap = v.as_count(key);
  else if (key == "run.output_path") c.output_path = v.as_text(key);
  // problem
  else if (key == "problem.kind") p.kind = parse_problem_kind(v.as_text(key));
  else if (key == "problem.seed") p.seed = v.as_count(key);
  else if (key == "problem.noise_std") p.noise_std = v.as_real(key);
  else if (key == "problem.rows") p.rows = v.as_count(key);
  else if (key == "problem.cols") p.cols = v.as_count(key);
  else if (key == "problem.condition") p.condition = v.as_real(key);
  else if (key == "problem.structure") p.structure = parse_structure(v.as_text(key));
  else if (key == "problem.samples") p.samples = v.as_count(key);
  else if (key == "problem.features") p.features = v.as_count(key);
  else if (key == "problem.feature_condition") p.feature_condition = v.as_real(key);
  else if (key == "problem.label_noise") p.label_noise = v.as_real(key);
  else if (key == "problem.inputs") p.inputs = v.as_count(key);
  else if (key == "problem.hidden") p.hidden = v.as_count(key);
  else if (key == "problem.classes") p.classes = v.as_count(key);
  // optimizer
  else if (key == "optimizer.family") o.family = parse_family(v.as_text(key));
  else if (key == "optimizer.beta1") o.beta1 = v.as_real(key);
  else if (key == "optimizer.beta2") o.beta2 = v.as_real(key);
  else if (key == "optimizer.beta3") o.beta3 = v.as_real(key);
  else if (key == "optimizer.epsilon") o.epsilon = v.as_real(key);
  else if (key == "optimizer.p") o.p = v.as_real(key);
  else if (key == "optimizer.wiring") o.wiring = parse_wiring(v.as_text(key));
  else if (key == "optimizer.scaling") o.scaling = parse_scaling(v.as_text(key));
  else if (key == "optimizer.weight_decay") o.weight_decay = v.as_real(key);
  else if (key == "optimizer.precondition_frequency") o.precondition_frequency = v.as_count(key);
  else if (key == "optimizer.ns_steps") o.ns_steps = static_cast<int>(v.as_count(key));
  else if (key == "optimizer.factor_init") o.factor_init = v.as_real(key);
  else if (key == "optimizer.centered_subtract_at_use") o.centered_subtract_at_use = v.as_bool(key);
  else if (key == "optimizer.nesterov") o.nesterov = v.as_bool(key);
  else if (key == "optimizer.basis_refresh") o.basis_refresh = v.as_bool(key);
  else if (key == "optimizer.graft.family") o.graft.family = parse_family(v.as_text(key));
  else if (key == "optimizer.graft.beta2") o.graft.beta2 = v.as_real(key);
  else if (key == "optimizer.graft.epsilon") o.graft.epsilon = v.as_real(key);
  else if (key == "optimizer.bias.first") o.bias.first = v.as_bool(key);
  else if (key == "optimizer.bias.second") o.bias.second = v.as_bool(key);
  else if (key == "optimizer.bias.third") o.bias.third = v.as_bool(key);
  else if (key == "optimizer.bias.factors") o.bias.factors = v.as_bool(key);
  else throw Error(ErrorCode::InvalidConfig, "unknown setting: " + key);
}

// ---------------------------------------------------------------------------
// Schedule, clipping, reshaping

inline std::size_t warmup_steps(std::size_t total_steps, double warmup_fraction) {
  return static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps) - 1e-12));
}

/// Linear warmup from 0, then cosine decay to 0 at t = total_steps.
inline double lr_at(std::size_t t, std::size_t total_steps, double warmup_fraction, double peak) {
  const std::size_t w = warmup_steps(total_steps, warmup_fraction);
  if (t < w) return peak * static_cast<double>(t) / static_cast<double>(w);
  if (total_steps <= w) return peak;
  const double progress = static_cast<double>(t - w) / static_cast<double>(total_steps - w);
  return peak * 0.5 * (1.0 + std::cos(M_PI * std::min(progress, 1.0)));
}

inline double lr_at(const RunConfig& c, std::size_t t) {
  return c.schedule == Schedule::Constant ? c.peak_lr : lr_at(t, c.total_steps, c.warmup_fraction, c.peak_lr);
}

inline double global_norm(const std::vector<Matrix>& ms) {
  double acc = 0.0;
  for (const Matrix& m : ms)
    for (double x : m.data()) acc += x * x;
  return std::sqrt(acc);
}

/// Joint rescaling to at most max_norm in Euclidean norm.
inline std::vector<Matrix> clip_global(std::vector<Matrix> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw Error(ErrorCode::InvalidConfig, "clip_global: max_norm must be positive");
  const double total = global_norm(grads);
  if (total > max_norm) {
    const double s = max_norm / total;
    for (Matrix& g : grads) g *= s;
  }
  return grads;
}

inline std::vector<std::size_t> reshape_params(const std::vector<std::size_t>& shape, ReshapeStrategy strategy,
                                               std::size_t cap = kDefaultReshapeCap) {
  if (shape.size() <= 1) return shape;
  std::size_t numel = 1;
  for (std::size_t d : shape) numel *= d;
  switch (strategy) {
    case ReshapeStrategy::Keep:
      return shape;
    case ReshapeStrategy::To1D:
      return {numel};
    case ReshapeStrategy::To2D: {
      const std::vector<std::size_t> folded{shape[0], numel / shape[0]};
      if (std::max(folded[0], folded[1]) > cap) return shape;
      return folded;
    }
  }
  return shape;
}

// ---------------------------------------------------------------------------
// Training

inline std::unique_ptr<Problem> make_problem(const ProblemSpec& p) {
  std::unique_ptr<Problem> out;
  switch (p.kind) {
    case ProblemKind::Quadratic:
      out = std::make_unique<QuadraticProblem>(p.rows, p.cols, p.condition, p.structure, p.seed);
      break;
    case ProblemKind::Logistic:
      out = std::make_unique<LogisticProblem>(p.samples, p.features, p.feature_condition, p.label_noise, p.seed, p.rows);
      break;
    case ProblemKind::Mlp:
      out = std::make_unique<MlpProblem>(p.samples, p.inputs, p.hidden, p.classes, p.seed);
      break;
  }
  out->set_noise_std(p.noise_std);
  return out;
}

inline std::vector<std::string> validate(const RunConfig& c) {
  if (c.total_steps == 0) throw Error(ErrorCode::InvalidConfig, "total_steps must be positive");
  if (!(c.warmup_fraction >= 0.0 && c.warmup_fraction < 1.0))
    throw Error(ErrorCode::InvalidConfig, "warmup_fraction must be in [0, 1)");
  if (c.warmup_fraction > 0.0 && c.warmup_fraction * static_cast<double>(c.total_steps) < 1.0)
    throw Error(ErrorCode::InvalidConfig, "warmup covers less than one step");
  if (!(c.peak_lr > 0.0)) throw Error(ErrorCode::InvalidConfig, "peak_lr must be positive");
  if (c.clip_norm && !(*c.clip_norm > 0.0)) throw Error(ErrorCode::InvalidConfig, "clip_norm must be positive");
  if (c.reshape_cap == 0) throw Error(ErrorCode::InvalidConfig, "reshape_cap must be positive");
  if (c.problem.noise_std < 0.0) throw Error(ErrorCode::InvalidConfig, "noise_std must be non-negative");
  return validate(c.optimizer);
}

struct TrainResult {
  std::vector<TraceRecord> trace;
  std::vector<Matrix> params;
  double final_loss = 0.0;
  bool diverged = false;
  std::string message;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::string what, std::vector<TraceRecord> partial)
      : Error(ErrorCode::DivergenceDetected, std::move(what)), partial_(std::move(partial)) {}
  const std::vector<TraceRecord>& partial_trace() const { return partial_; }

 private:
  std::vector<TraceRecord> partial_;
};

namespace detail {

struct ParamSlot {
  OptimizerSpec spec;
  OptimizerState state;
  std::size_t rows = 0, cols = 0;  // optimizer view
};

inline ParamSlot make_slot(const RunConfig& c, const std::vector<std::size_t>& shape) {
  ParamSlot s;
  s.spec = c.optimizer;
  const std::vector<std::size_t> dims = reshape_params(shape, c.reshape, c.reshape_cap);
  if (dims.size() > 2 && s.spec.family == Family::Shampoo) s.spec.family = Family::OrderN;
  const auto [r, k] = storage_shape(dims);
  s.rows = r;
  s.cols = k;
  s.state = init_state(s.spec, r, k, dims.size() > 2 ? dims : std::vector<std::size_t>{});
  return s;
}

}  // namespace detail

/// Runs the loop on a given problem; a non-finite loss stops it with diverged = true and the partial trace.
inline TrainResult train_problem(const Problem& problem, const RunConfig& config) {
  validate(config);
  const auto shapes = problem.parameter_shapes();
  TrainResult out;
  out.params = problem.initial_params();
  std::vector<detail::ParamSlot> slots;
  for (const auto& shape : shapes) slots.push_back(detail::make_slot(config, shape));

  auto diverge = [&](const std::string& why) {
    out.diverged = true;
    out.message = why;
    out.final_loss = std::numeric_limits<double>::infinity();
    return out;
  };

  for (std::size_t t = 0; t < config.total_steps; ++t) {
    const double loss = problem.loss_at(out.params);
    if (!std::isfinite(loss)) return diverge("non-finite loss at step " + std::to_string(t));
    std::vector<Matrix> grads = problem.grad_at(out.params, config.seed, t);
    const double gnorm = global_norm(grads);
    if (!std::isfinite(gnorm)) return diverge("non-finite gradient at step " + std::to_string(t));
    if (config.clip_norm) grads = clip_global(std::move(grads), *config.clip_norm);
    const double lr = lr_at(config, t);
    double unorm2 = 0.0;
    for (std::size_t k = 0; k < slots.size(); ++k) {
      auto& slot = slots[k];
      const Matrix& p = out.params[k];
      StepResult r = step(slot.spec, slot.state, p.reshaped(slot.rows, slot.cols), grads[k].reshaped(slot.rows, slot.cols), lr);
      for (double x : r.update.data()) unorm2 += x * x;
      out.params[k] = r.theta.reshaped(p.rows(), p.cols());
    }
    out.trace.push_back(TraceRecord{t, loss, gnorm, std::sqrt(unorm2), lr});
  }
  out.final_loss = problem.loss_at(out.params);
  if (!std::isfinite(out.final_loss)) return diverge("non-finite final loss");
  return out;
}

inline TrainResult train_run(const RunConfig& config) {
  validate(config);
  return train_problem(*make_problem(config.problem), config);
}

/// Trace of a run; throws TrainingDiverged carrying the partial trace.
inline std::vector<TraceRecord> train(const RunConfig& config) {
  TrainResult r = train_run(config);
  if (r.diverged) throw TrainingDiverged(r.message, std::move(r.trace));
  return std::move(r.trace);
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_csv_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string trace_csv(const std::vector<TraceRecord>& trace) {
  std::string out = "step,loss,grad_norm,update_norm,lr\n";
  for (const auto& r : trace) {
    out += std::to_string(r.step) + ',' + format_csv_real(r.loss) + ',' + format_csv_real(r.grad_norm) + ',' +
           format_csv_real(r.update_norm) + ',' + format_csv_real(r.lr) + '\n';
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path);
  f << text;
  if (!f) throw Error(ErrorCode::Io, "write failed: " + path);
}

inline std::vector<TraceRecord> parse_trace_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("step,loss", 0) != 0) throw Error(ErrorCode::Io, "trace: missing header");
  std::vector<TraceRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TraceRecord r;
    unsigned long long step = 0;
    if (std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf,%lf", &step, &r.loss, &r.grad_norm, &r.update_norm, &r.lr) != 5)
      throw Error(ErrorCode::Io, "trace: malformed row: " + line);
    r.step = static_cast<std::size_t>(step);
    out.push_back(r);
  }
  return out;
}

inline std::vector<TraceRecord> read_trace_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_trace_csv(ss.str());
}

// ---------------------------------------------------------------------------
// Sweeps

using SweepGrid = std::vector<std::pair<std::string, std::vector<ConfigValue>>>;

struct SweepRow {
  std::size_t index = 0;
  std::vector<ConfigValue> settings;  // one per grid key
  std::uint64_t seed = 0;
  std::string status;                 // ok, diverged, or error text
  double final_loss = 0.0;
  double best_loss = 0.0;
};

struct SweepResult {
  std::vector<std::string> keys;
  std::vector<SweepRow> rows;
  std::optional<std::size_t> best;  // index of the best finite final loss
};

/// Cartesian product in row-major order (last key varies fastest).
inline std::vector<std::vector<ConfigValue>> grid_points(const SweepGrid& grid) {
  std::vector<std::vector<ConfigValue>> out{{}};
  for (const auto& [key, values] : grid) {
    if (values.empty()) throw Error(ErrorCode::InvalidConfig, "sweep: no values for " + key);
    std::vector<std::vector<ConfigValue>> next;
    for (const auto& prefix : out)
      for (const auto& v : values) {
        auto p = prefix;
        p.push_back(v);
        next.push_back(std::move(p));
      }
    out = std::move(next);
  }
  return out;
}

inline SweepResult run_sweep(const RunConfig& base, const SweepGrid& grid) {
  if (grid.empty()) throw Error(ErrorCode::InvalidConfig, "sweep: empty grid");
  SweepResult res;
  for (const auto& kv : grid) res.keys.push_back(kv.first);
  const auto points = grid_points(grid);
  for (std::size_t i = 0; i < points.size(); ++i) {
    SweepRow row;
    row.index = i;
    row.settings = points[i];
    RunConfig c = base;
    try {
      for (std::size_t k = 0; k < grid.size(); ++k) apply_setting(c, grid[k].first, points[i][k]);
      c.seed = derive(base.seed, i);
      row.seed = c.seed;
      const TrainResult r = train_run(c);
      row.status = r.diverged ? "diverged" : "ok";
      row.final_loss = r.final_loss;
      row.best_loss = r.final_loss;
      for (const auto& t : r.trace) row.best_loss = std::min(row.best_loss, t.loss);
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
      row.final_loss = row.best_loss = std::numeric_limits<double>::infinity();
    }
    if (row.status == "ok" && (!res.best || row.final_loss < res.rows[*res.best].final_loss)) res.best = i;
    res.rows.push_back(std::move(row));
  }
  return res;
}

namespace detail {

inline std::string csv_field(std::string s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

}  // namespace detail

inline std::string sweep_csv(const SweepResult& r) {
  std::string out = "index";
  for (const auto& k : r.keys) out += ',' + detail::csv_field(k);
  out += ",seed,status,final_loss,best_loss,best\n";
  for (const auto& row : r.rows) {
    out += std::to_string(row.index);
    for (const auto& v : row.settings) out += ',' + detail::csv_field(v.to_text());
    out += ',' + std::to_string(row.seed) + ',' + detail::csv_field(row.status) + ',' + format_csv_real(row.final_loss) +
           ',' + format_csv_real(row.best_loss) + ',' + (r.best && *r.best == row.index ? "1" : "0") + '\n';
  }
  return out;
}

/// Best final loss over a learning-rate grid.
struct LrTuning {
  double best_lr = 0.0;
  double best_final = std::numeric_limits<double>::infinity();
  std::vector<double> finals;
};

inline LrTuning tune_lr(RunConfig c, const std::vector<double>& lrs) {
  LrTuning out;
  for (double lr : lrs) {
    c.peak_lr = lr;
    const TrainResult r = train_run(c);
    const double f = r.diverged ? std::numeric_limits<double>::infinity() : r.final_loss;
    out.finals.push_back(f);
    if (f < out.best_final) {
      out.best_final = f;
      out.best_lr = lr;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVG plot

struct PlotSeries {
  std::string label;
  std::vector<TraceRecord> trace;
};

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

/// Loss against step, log-scale loss axis.
inline std::string plot_svg(const std::vector<PlotSeries>& series, const std::string& title = "loss") {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  const double w = 720, h = 440, left = 70, right = 170, top = 40, bottom = 50;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t max_step = 1;
  for (const auto& s : series)
    for (const auto& r : s.trace) {
      if (r.loss > 0.0 && std::isfinite(r.loss)) {
        lo = std::min(lo, r.loss);
        hi = std::max(hi, r.loss);
      }
      max_step = std::max(max_step, r.step);
    }
  if (!std::isfinite(lo)) {
    lo = 1e-3;
    hi = 1.0;
  }
  double dlo = std::floor(std::log10(lo)), dhi = std::ceil(std::log10(hi));
  if (dhi <= dlo) dhi = dlo + 1;
  auto fmt = [](double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", x);
    return std::string(buf);
  };
  auto px = [&](double step) { return left + (w - left - right) * step / static_cast<double>(max_step); };
  auto py = [&](double loss) {
    const double l = std::log10(std::max(loss, std::pow(10.0, dlo)));
    return top + (h - top - bottom) * (dhi - l) / (dhi - dlo);
  };
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(w) + "\" height=\"" + fmt(h) +
                    "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + fmt(w / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + svg_escape(title) + "</text>\n";
  out += "<rect x=\"" + fmt(left) + "\" y=\"" + fmt(top) + "\" width=\"" + fmt(w - left - right) + "\" height=\"" +
         fmt(h - top - bottom) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double d = dlo; d <= dhi + 0.5; d += 1.0) {
    const double y = py(std::pow(10.0, d));
    out += "<line x1=\"" + fmt(left) + "\" x2=\"" + fmt(w - right) + "\" y1=\"" + fmt(y) + "\" y2=\"" + fmt(y) +
           "\" stroke=\"#ddd\"/>\n";
    out += "<text x=\"" + fmt(left - 6) + "\" y=\"" + fmt(y + 4) + "\" text-anchor=\"end\">1e" +
           std::to_string(static_cast<int>(d)) + "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double s = static_cast<double>(max_step) * k / 4.0;
    out += "<text x=\"" + fmt(px(s)) + "\" y=\"" + fmt(h - bottom + 18) + "\" text-anchor=\"middle\">" +
           std::to_string(static_cast<long long>(std::llround(s))) + "</text>\n";
  }
  out += "<text x=\"" + fmt((left + w - right) / 2) + "\" y=\"" + fmt(h - 10) + "\" text-anchor=\"middle\">step</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = colors[i % 8];
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (const auto& r : series[i].trace) {
      if (!std::isfinite(r.loss)) break;
      out += (first ? "" : " ") + fmt(px(static_cast<double>(r.step))) + "," + fmt(py(r.loss));
      first = false;
    }
    out += "\"/>\n";
    const double ly = top + 16.0 * static_cast<double>(i) + 8;
    out += "<line x1=\"" + fmt(w - right + 10) + "\" x2=\"" + fmt(w - right + 30) + "\" y1=\"" + fmt(ly) + "\" y2=\"" +
           fmt(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + fmt(w - right + 36) + "\" y=\"" + fmt(ly + 4) + "\">" + svg_escape(series[i].label) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace matopt
