#include "rpl/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "rpl/csv.hpp"
#include "rpl/errors.hpp"
#include "rpl/nuisance.hpp"
#include "rpl/policyopt.hpp"
#include "rpl/random.hpp"
#include "rpl/retarget.hpp"
#include "rpl/scores.hpp"
#include "rpl/simulate.hpp"

namespace rpl {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// RunConfig

RunConfig RunConfig::parse(std::istream& in, std::string_view source) {
  RunConfig cfg;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const auto body = csv::trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw InputError(std::string(source) + " line " + std::to_string(number) + ": expected key=value");
    const std::string key(csv::trim(body.substr(0, eq)));
    if (key.empty()) throw InputError(std::string(source) + " line " + std::to_string(number) + ": empty key");
    if (cfg.has(key))
      throw InputError(std::string(source) + " line " + std::to_string(number) + ": duplicate key '" + key + "'");
    cfg.values_[key] = std::string(csv::trim(body.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  return parse(in, path.string());
}

void RunConfig::set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw InputError("expected key=value, got '" + std::string(assignment) + "'");
  const std::string key(csv::trim(assignment.substr(0, eq)));
  if (key.empty()) throw InputError("empty key in '" + std::string(assignment) + "'");
  set(key, std::string(csv::trim(assignment.substr(eq + 1))));
}

void RunConfig::set(const std::string& key, std::string value) { values_[key] = std::move(value); }

std::string RunConfig::command() const {
  const auto it = values_.find("command");
  if (it == values_.end()) throw InputError("no command given (weights, learn or simulate)");
  if (it->second != "weights" && it->second != "learn" && it->second != "simulate")
    throw InputError("unknown command '" + it->second + "'");
  return it->second;
}

std::string RunConfig::text(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double RunConfig::number(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return parse_double(it->second);
  } catch (const InputError&) {
    throw InputError("key '" + key + "': '" + it->second + "' is not a number");
  }
}

std::uint64_t RunConfig::unsigned_integer(const std::string& key, std::uint64_t fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::uint64_t v = 0;
  const auto& s = it->second;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw InputError("key '" + key + "': '" + s + "' is not a non-negative integer");
  return v;
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  const auto it = values_.find(key);
  if (it == values_.end()) return out;
  for (const auto& f : csv::split(it->second)) {
    const auto t = csv::trim(f);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

std::vector<double> RunConfig::numbers(const std::string& key) const {
  std::vector<double> out;
  const auto it = values_.find(key);
  if (it == values_.end()) return out;
  const std::string_view v = csv::trim(it->second);
  try {
    if (v.rfind("log:", 0) == 0) {
      const auto parts = csv::split(v.substr(4), ':');
      if (parts.size() != 3) throw InputError("expected log:lo:hi:count");
      const double count = parse_double(parts[2]);
      if (count < 1 || count != std::floor(count)) throw InputError("log grid count must be a positive integer");
      return log_grid(parse_double(parts[0]), parse_double(parts[1]), static_cast<std::size_t>(count));
    }
    for (const auto& s : list(key)) out.push_back(parse_double(s));
  } catch (const InputError& e) {
    throw InputError("key '" + key + "': " + e.what());
  }
  return out;
}

namespace {

const std::set<std::string>& allowed_keys(const std::string& command) {
  static const std::set<std::string> weights{"command", "seed", "workers", "out", "data", "nuisance", "actions",
                                             "mode", "lambda", "c", "q1", "q2", "beta", "n", "propensity",
                                             "outcome", "folds"};
  static const std::set<std::string> learn{"command", "seed", "workers", "out", "data", "actions", "method",
                                           "retarget", "lambda", "c", "propensity", "outcome", "folds",
                                           "theta_steps", "random_starts"};
  static const std::set<std::string> simulate{"command", "seed", "workers", "out", "scenarios", "methods",
                                              "n_grid", "beta_grid", "c_grid", "replicates", "test_size",
                                              "nuisance", "propensity", "outcome", "folds", "theta_steps"};
  if (command == "weights") return weights;
  if (command == "learn") return learn;
  return simulate;
}

}  // namespace

void RunConfig::check_keys() const {
  const auto& allowed = allowed_keys(command());
  std::string unknown;
  for (const auto& [k, v] : values_)
    if (!allowed.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  if (!unknown.empty()) throw InputError("unknown key(s) for '" + command() + "': " + unknown);
}

SimulationConfig simulation_from(const RunConfig& cfg) {
  SimulationConfig sim;
  for (const auto& s : cfg.list("scenarios")) sim.scenarios.push_back(ScenarioSpec::parse(s));
  if (!cfg.has("scenarios")) sim.scenarios.push_back(ScenarioSpec::parse("well-stationary"));
  for (const auto& m : cfg.list("methods")) sim.methods.push_back(MethodSpec::parse(m));
  for (double n : cfg.numbers("n_grid")) {
    if (!(n >= 1.0)) throw InputError("n_grid values must be positive");
    sim.n_grid.push_back(static_cast<std::size_t>(std::llround(n)));
  }
  sim.beta_grid = cfg.numbers("beta_grid");
  sim.c_grid = cfg.numbers("c_grid");
  sim.replicates = cfg.unsigned_integer("replicates", 200);
  sim.test_size = cfg.unsigned_integer("test_size", 100000);
  const std::string nuisance = cfg.text("nuisance", "fitted");
  if (nuisance != "oracle" && nuisance != "fitted") throw InputError("nuisance must be oracle or fitted");
  sim.nuisance.oracle = nuisance == "oracle";
  sim.nuisance.propensity = parse_propensity_method(cfg.text("propensity", "boosted-stumps"));
  sim.nuisance.outcome = parse_outcome_method(cfg.text("outcome", "per-arm-boosted-stumps"));
  sim.nuisance.folds = static_cast<int>(cfg.unsigned_integer("folds", 5));
  sim.grid.theta_steps = static_cast<int>(cfg.unsigned_integer("theta_steps", 720));
  sim.seed = cfg.unsigned_integer("seed", 0);
  sim.workers = static_cast<unsigned>(cfg.unsigned_integer("workers", 1));
  sim.validate();
  return sim;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

fs::path require_file(const RunConfig& cfg, const std::string& key) {
  const fs::path p = cfg.text(key, "");
  if (p.empty()) throw InputError("missing required key '" + key + "'");
  if (!fs::is_regular_file(p)) throw InputError(key + ": no such file " + p.string());
  std::ifstream probe(p);
  if (!probe) throw InputError(key + ": cannot read " + p.string());
  return p;
}

fs::path prepare_out(const RunConfig& cfg) {
  const fs::path out = cfg.text("out", ".");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (!fs::is_directory(out)) throw InputError("output directory " + out.string() + " cannot be created");
  return out;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("cannot write " + p.string());
  return f;
}

NuisanceSpec nuisance_spec(const RunConfig& cfg, int m) {
  NuisanceSpec spec;
  const std::string fallback = "boosted-stumps";
  spec.propensity = parse_propensity_method(cfg.text("propensity", fallback));
  spec.outcome = parse_outcome_method(cfg.text("outcome", "per-arm-boosted-stumps"));
  if (spec.propensity == PropensityMethod::Logistic && m != 2) spec.propensity = PropensityMethod::MultinomialLogistic;
  spec.folds = static_cast<int>(cfg.unsigned_integer("folds", 5));
  return spec;
}

FittedNuisance fit_for(const ObservationSet& data, const RunConfig& cfg, std::uint64_t seed) {
  const NuisanceSpec spec = nuisance_spec(cfg, data.num_actions());
  const auto plan = CrossFitPlan::make(data.size(), spec.folds, derive_seed(seed, {0x706c616e}));
  return fit_nuisance(data, plan, spec.propensity, spec.outcome, spec.options, derive_seed(seed, {0x6e75697361}));
}

int cmd_weights(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const std::uint64_t seed = cfg.unsigned_integer("seed", 0);
  const bool from_data = cfg.has("data");
  fs::path data_path, nuisance_path;
  if (from_data) data_path = require_file(cfg, "data");
  if (cfg.has("nuisance")) {
    if (!from_data) throw InputError("nuisance requires data");
    nuisance_path = require_file(cfg, "nuisance");
  }
  const std::string mode = cfg.text("mode", "optimal");
  if (mode != "optimal" && mode != "binary" && mode != "bias-lambda" && mode != "bias-c")
    throw InputError("mode must be optimal, binary, bias-lambda or bias-c");
  const fs::path out_dir = prepare_out(cfg);

  Matrix xs;
  NuisanceValues nv;
  std::size_t clipped = 0;
  if (from_data) {
    const auto data = ObservationSet::load_csv(data_path, static_cast<int>(cfg.unsigned_integer("actions", 0)));
    xs = data.covariates();
    if (!nuisance_path.empty()) {
      std::ifstream in(nuisance_path);
      nv = read_nuisance_csv(in);
      if (nv.size() != data.size() || nv.num_actions() != data.num_actions())
        throw InputError("nuisance file has " + std::to_string(nv.size()) + " rows and " +
                         std::to_string(nv.num_actions()) + " actions; data has " + std::to_string(data.size()) +
                         " and " + std::to_string(data.num_actions()));
    } else {
      auto fitted = fit_for(data, cfg, seed);
      nv = std::move(fitted.values);
      clipped = fitted.clipped;
    }
  } else {
    DGPConfig dgp;
    dgp.q1 = cfg.number("q1", 1.0);
    dgp.q2 = cfg.number("q2", 1.0);
    dgp.beta = cfg.number("beta", 0.0);
    dgp.n = cfg.unsigned_integer("n", 0);
    dgp.seed = seed;
    if (dgp.n == 0) throw InputError("give data=PATH or a synthetic design with n > 0");
    const auto data = draw_training(dgp);
    xs = data.covariates();
    nv = oracle_nuisance(dgp).evaluate(xs);
  }

  Retargeting r;
  if (mode == "binary") {
    r = optimal_binary(nv);
  } else if (mode == "bias-lambda") {
    r = bias_regularized(nv, cfg.number("lambda", 0.0));
  } else if (mode == "bias-c") {
    const double c = cfg.number("c", std::nan(""));
    if (!(c > 0.0)) throw InputError("bias-c needs c > 0");
    r = std::isinf(c) ? optimal_multi(nv) : bias_regularized(nv, 1.0 / std::sqrt(c));
  } else if (cfg.has("lambda")) {
    r = bias_regularized(nv, cfg.number("lambda", 0.0));
  } else {
    r = optimal_multi(nv);
  }
  r.clipped += clipped;
  auto f = open_out(out_dir / "weights.csv");
  write_diagnostics_csv(f, xs, r);
  out << "omega=" << format_double(r.omega) << " worst_case_bias=" << format_double(worst_case_bias(r.weight))
      << '\n';
  if (r.reference_violations > 0)
    err << "warning: reference policy leaves the simplex at " << r.reference_violations << " rows\n";
  if (r.clipped > 0) err << "warning: " << r.clipped << " propensities raised to the floor\n";
  return 0;
}

int cmd_learn(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const std::uint64_t seed = cfg.unsigned_integer("seed", 0);
  const fs::path data_path = require_file(cfg, "data");
  const MethodSpec method = MethodSpec::parse(cfg.text("method", "dr+rt"));
  const fs::path out_dir = prepare_out(cfg);
  const auto data = ObservationSet::load_csv(data_path, static_cast<int>(cfg.unsigned_integer("actions", 0)));
  const int m = data.num_actions();

  RetargetSpec spec;
  if (cfg.has("retarget")) {
    spec.mode = parse_retarget_mode(cfg.text("retarget", "none"));
  } else if (method.weighting == MethodSpec::Weighting::Full) {
    spec.mode = m == 2 ? RetargetMode::BinaryHomoskedastic : RetargetMode::MultiHomoskedastic;
  } else if (method.weighting == MethodSpec::Weighting::Padded) {
    spec.mode = RetargetMode::BiasC;
  }
  if (spec.mode == RetargetMode::BiasLambda) spec.parameter = cfg.number("lambda", 0.0);
  if (spec.mode == RetargetMode::BiasC) {
    spec.parameter = cfg.number("c", std::nan(""));
    if (!(spec.parameter >= 0.0)) throw InputError("bias-c retargeting needs c >= 0");
  }

  const auto fitted = fit_for(data, cfg, seed);
  if (fitted.clipped > 0) err << "warning: " << fitted.clipped << " propensities raised to the floor\n";
  const ScoreMatrix raw = build_scores(data, fitted.values, method.score);
  const ScoreMatrix weighted = apply_retargeting(raw, fitted.values, spec);
  const ScoreMatrix scores = normalize(weighted);

  std::optional<LinearPolicy> policy;
  const Matrix& xs = data.covariates();
  if (m == 2 && data.dim() == 2) {
    GridSearchConfig grid;
    grid.theta_steps = static_cast<int>(cfg.unsigned_integer("theta_steps", 720));
    policy = solve_binary_linear(scores, xs, grid).policy;
  } else {
    MultiSearchConfig search;
    search.seed = derive_seed(seed, {0x736f6c7665});
    search.random_starts = static_cast<int>(cfg.unsigned_integer("random_starts", 50));
    const auto sol = solve_multi_linear(scores, xs, search);
    policy = sol.policy;
    if (sol.certified) err << (sol.search_optimal ? "certified optimal by exact search\n" : "exact search improved the local search\n");
  }

  {
    auto f = open_out(out_dir / "policy.csv");
    policy->write(f);
  }
  {
    auto f = open_out(out_dir / "nuisance.csv");
    write_nuisance_csv(f, fitted.values);
  }
  {
    auto f = open_out(out_dir / "scores.csv");
    write_scores_csv(f, scores);
  }
  const Matrix z = policy->one_hot(xs);
  out << "value_estimate=" << format_double(estimate_value(raw, z)) << '\n';
  if (weighted.retargeted) out << "retargeted_value_estimate=" << format_double(estimate_value(weighted, z)) << '\n';
  return 0;
}

int cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  SimulationConfig sim = simulation_from(cfg);
  const fs::path out_dir = prepare_out(cfg);
  sim.progress = [&err](const std::string& msg) { err << "progress: " << msg << '\n'; };
  const auto results = run_simulation(sim);
  {
    auto f = open_out(out_dir / "results.csv");
    write_results_csv(f, results);
  }
  std::size_t failures = 0, successes = 0;
  for (const auto& r : results) {
    failures += r.failures;
    successes += r.replicates;
    for (std::size_t k = 0; k < r.failed_seeds.size() && k < 3; ++k)
      err << "failed: " << r.scenario << ' ' << r.method << " n=" << r.n << " seed=" << r.failed_seeds[k] << ": "
          << r.failure_messages[k] << '\n';
  }
  out << "wrote " << results.size() << " rows to " << (out_dir / "results.csv").string() << '\n';
  if (successes == 0) {
    err << "error: every replicate failed\n";
    return 5;
  }
  if (failures > 0) err << "warning: " << failures << " method-replicates failed\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Retargeted policy learning: weights, learning and simulation"};
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::string out_dir;
  std::vector<std::string> positional;
  app.add_option("--config", config_path, "key=value configuration file");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--workers", workers, "worker threads for simulate")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "output directory");
  app.add_option("args", positional, "[weights|learn|simulate] [key=value ...]");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    for (const auto& p : positional) {
      if (p.find('=') == std::string::npos) {
        if (cfg.has("command") && cfg.text("command", "") != p && &p != &positional.front())
          throw InputError("unexpected argument '" + p + "'");
        cfg.set("command", p);
      } else {
        cfg.set(std::string_view(p));
      }
    }
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (workers) cfg.set("workers", std::to_string(*workers));
    if (!out_dir.empty()) cfg.set("out", out_dir);
    cfg.check_keys();
    const std::string command = cfg.command();
    if (command == "weights") return cmd_weights(cfg, out, err);
    if (command == "learn") return cmd_learn(cfg, out, err);
    return cmd_simulate(cfg, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace rpl
