#include "rpl/simulate.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "rpl/errors.hpp"
#include "rpl/random.hpp"

namespace rpl {

ObservationSet draw_training(const DGPConfig& config) {
  config.validate();
  if (config.n == 0) throw InputError("training size must be positive");
  const auto n = static_cast<Eigen::Index>(config.n);
  RandomStream rng(config.seed);
  Matrix xs(n, 2);
  std::vector<Action> actions(config.n);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u1 = signed_power(rng.uniform(-1.0, 1.0), config.q1);
    const double u2 = signed_power(rng.uniform(-1.0, 1.0), config.q1);
    const double eps = rng.normal();
    const bool plus = rng.bernoulli(normal_cdf(config.beta * u1));
    const double y_minus = u1 + eps;
    const double y_plus = y_minus + u1 + u2 + 0.25;
    xs(i, 0) = signed_power(u1, config.q2);
    xs(i, 1) = signed_power(u2, config.q2);
    actions[static_cast<std::size_t>(i)] = plus ? 2 : 1;
    y(i) = plus ? y_plus : y_minus;
  }
  return ObservationSet(std::move(xs), std::move(actions), std::move(y), 2);
}

TestSet draw_test(double q1, double q2, std::size_t size, std::uint64_t seed) {
  DGPConfig{q1, q2, 0.0, size, seed}.validate();
  if (size == 0) throw InputError("test size must be positive");
  RandomStream rng(seed);
  TestSet t;
  t.xs.resize(static_cast<Eigen::Index>(size), 2);
  for (Eigen::Index i = 0; i < t.xs.rows(); ++i) {
    t.xs(i, 0) = signed_power(signed_power(rng.uniform(-1.0, 1.0), q1), q2);
    t.xs(i, 1) = signed_power(signed_power(rng.uniform(-1.0, 1.0), q1), q2);
  }
  t.mu = oracle_outcome(t.xs, q2);
  return t;
}

ScenarioSpec ScenarioSpec::parse(std::string_view name) {
  const auto dash = name.find('-');
  if (dash == std::string_view::npos) throw InputError("scenario '" + std::string(name) + "' is not <well|mis>-<shift>");
  const auto spec = name.substr(0, dash);
  const auto shift = name.substr(dash + 1);
  ScenarioSpec s;
  s.name = std::string(name);
  if (spec == "well") s.q2 = 1.0;
  else if (spec == "mis") s.q2 = 0.5;
  else throw InputError("scenario '" + std::string(name) + "': specification must be well or mis");
  if (shift == "stationary") s.q1_test = 1.0;
  else if (shift == "inward") s.q1_test = 2.0;
  else if (shift == "outward") s.q1_test = 0.5;
  else throw InputError("scenario '" + std::string(name) + "': shift must be stationary, inward or outward");
  return s;
}

MethodSpec MethodSpec::parse(std::string_view label) {
  MethodSpec m;
  const auto plus = label.find('+');
  m.score = parse_score_method(label.substr(0, plus));
  if (plus != std::string_view::npos) {
    const auto suffix = label.substr(plus + 1);
    if (suffix == "rt") m.weighting = Weighting::Full;
    else if (suffix == "c") m.weighting = Weighting::Padded;
    else throw InputError("method '" + std::string(label) + "': suffix must be +rt or +c");
  }
  return m;
}

std::string MethodSpec::label() const {
  std::string s(to_string(score));
  if (weighting == Weighting::Full) s += "+rt";
  if (weighting == Weighting::Padded) s += "+c";
  return s;
}

void SimulationConfig::validate() const {
  if (scenarios.empty()) throw InputError("no scenarios configured");
  if (methods.empty()) throw InputError("no methods configured");
  if (n_grid.empty()) throw InputError("no training sizes configured");
  if (beta_grid.empty()) throw InputError("no beta values configured");
  if (replicates < 2) throw InputError("at least 2 replicates are required");
  if (test_size == 0) throw InputError("test size must be positive");
  if (workers == 0) throw InputError("workers must be at least 1");
  for (auto n : n_grid)
    if (n < 10) throw InputError("training size " + std::to_string(n) + " is too small");
  for (double b : beta_grid)
    if (!(b >= 0.0) || !std::isfinite(b)) throw InputError("beta values must be finite and >= 0");
  bool padded = false;
  for (const auto& m : methods) padded |= m.weighting == MethodSpec::Weighting::Padded;
  if (padded && c_grid.empty()) throw InputError("a +c method needs a c grid");
  for (double c : c_grid)
    if (!(c >= 0.0)) throw InputError("c values must be >= 0");
  if (!nuisance.oracle && nuisance.folds < 2) throw InputError("cross-fitting needs at least 2 folds");
  grid.validate();
}

std::uint64_t replicate_seed(std::uint64_t master, const ScenarioSpec& scenario, std::size_t n, double beta,
                             std::size_t replicate) {
  std::uint64_t name_hash = 0xcbf29ce484222325ULL;
  for (char ch : scenario.name) name_hash = (name_hash ^ static_cast<unsigned char>(ch)) * 0x100000001b3ULL;
  return derive_seed(master, {name_hash, static_cast<std::uint64_t>(n), std::bit_cast<std::uint64_t>(beta),
                              static_cast<std::uint64_t>(replicate)});
}

namespace {

struct Variant {
  std::string method;
  ScoreMethod score;
  RetargetSpec retarget;
  bool retargeted;
  std::optional<double> c;
};

std::vector<Variant> expand(const SimulationConfig& config) {
  std::vector<Variant> out;
  for (const auto& m : config.methods) {
    switch (m.weighting) {
      case MethodSpec::Weighting::None:
        out.push_back({m.label(), m.score, {RetargetMode::None, 0.0}, false, std::nullopt});
        break;
      case MethodSpec::Weighting::Full:
        out.push_back({m.label(), m.score, {RetargetMode::BinaryHomoskedastic, 0.0}, true, std::nullopt});
        break;
      case MethodSpec::Weighting::Padded:
        for (double c : config.c_grid) out.push_back({m.label(), m.score, {RetargetMode::BiasC, c}, c > 0.0, c});
        break;
    }
  }
  return out;
}

struct Point {
  std::size_t scenario;
  std::size_t n;
  double beta;
};

struct TaskOutcome {
  std::vector<std::optional<double>> regret;  // per variant
  std::vector<std::string> error;             // per variant, empty on success
  std::uint64_t seed = 0;
};

TaskOutcome run_replicate(const SimulationConfig& config, const ScenarioSpec& scenario, const TestSet& test,
                          const Point& point, const std::vector<Variant>& variants, std::size_t replicate) {
  TaskOutcome out;
  out.regret.assign(variants.size(), std::nullopt);
  out.error.assign(variants.size(), std::string());
  out.seed = replicate_seed(config.seed, scenario, point.n, point.beta, replicate);
  try {
    const DGPConfig dgp{1.0, scenario.q2, point.beta, point.n, out.seed};
    const ObservationSet train = draw_training(dgp);
    NuisanceValues nv;
    if (config.nuisance.oracle) {
      nv = oracle_nuisance(dgp).evaluate(train.covariates());
    } else {
      const auto plan = CrossFitPlan::make(train.size(), config.nuisance.folds, derive_seed(out.seed, {0x706c616e}));
      nv = fit_nuisance(train, plan, config.nuisance.propensity, config.nuisance.outcome, config.nuisance.options,
                        derive_seed(out.seed, {0x6e75697361}))
               .values;
    }
    std::vector<std::optional<ScoreMatrix>> base(4);
    std::vector<Vector> diffs;
    std::vector<std::size_t> owner;
    for (std::size_t v = 0; v < variants.size(); ++v) {
      try {
        auto& b = base[static_cast<std::size_t>(variants[v].score)];
        if (!b) b = build_scores(train, nv, variants[v].score);
        const ScoreMatrix weighted = apply_retargeting(*b, nv, variants[v].retarget);
        if (config.on_scores) config.on_scores(out.seed, variants[v].method, variants[v].c, weighted);
        const ScoreMatrix s = normalize(weighted);
        diffs.push_back(s.gamma.col(1) - s.gamma.col(0));
        owner.push_back(v);
      } catch (const std::exception& e) {
        out.error[v] = e.what();
      }
    }
    const auto solutions = solve_binary_linear_batch(diffs, train.covariates(), config.grid);
    for (std::size_t k = 0; k < solutions.size(); ++k) {
      const auto chosen = solutions[k].policy.actions(test.xs);
      out.regret[owner[k]] = regret(chosen, test.mu);
    }
  } catch (const std::exception& e) {
    for (std::size_t v = 0; v < variants.size(); ++v)
      if (!out.regret[v] && out.error[v].empty()) out.error[v] = e.what();
  }
  return out;
}

}  // namespace

std::vector<ScenarioResult> run_simulation(const SimulationConfig& config) {
  config.validate();
  const auto variants = expand(config);

  std::vector<TestSet> tests;
  for (const auto& s : config.scenarios)
    tests.push_back(draw_test(s.q1_test, s.q2, config.test_size, derive_seed(config.seed, {0x74657374, std::bit_cast<std::uint64_t>(s.q1_test), std::bit_cast<std::uint64_t>(s.q2)})));

  std::vector<Point> points;
  for (std::size_t s = 0; s < config.scenarios.size(); ++s)
    for (auto n : config.n_grid)
      for (double beta : config.beta_grid) points.push_back({s, n, beta});

  const std::size_t total = points.size() * config.replicates;
  std::vector<TaskOutcome> outcomes(total);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t task = next.fetch_add(1);
      if (task >= total) return;
      const Point& p = points[task / config.replicates];
      outcomes[task] = run_replicate(config, config.scenarios[p.scenario], tests[p.scenario], p, variants,
                                     task % config.replicates);
      const std::size_t finished = ++done;
      if (config.progress && (finished % config.replicates == 0 || finished == total)) {
        std::lock_guard lock(progress_mutex);
        config.progress(std::to_string(finished) + "/" + std::to_string(total) + " replicates");
      }
    }
  };
  const unsigned threads = static_cast<unsigned>(std::min<std::size_t>(config.workers, total));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::vector<ScenarioResult> results;
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    const Point& p = points[pi];
    const ScenarioSpec& sc = config.scenarios[p.scenario];
    for (std::size_t v = 0; v < variants.size(); ++v) {
      ScenarioResult r;
      r.scenario = sc.name;
      r.method = variants[v].method;
      r.retargeted = variants[v].retargeted;
      r.n = p.n;
      r.beta = p.beta;
      r.c = variants[v].c;
      r.q1_test = sc.q1_test;
      r.q2 = sc.q2;
      for (std::size_t rep = 0; rep < config.replicates; ++rep) {
        const TaskOutcome& o = outcomes[pi * config.replicates + rep];
        if (o.regret[v]) {
          r.regrets.push_back(*o.regret[v]);
        } else {
          r.failed_seeds.push_back(o.seed);
          r.failure_messages.push_back(o.error[v]);
        }
      }
      r.replicates = r.regrets.size();
      r.failures = r.failed_seeds.size();
      if (r.replicates > 0) {
        double sum = 0.0;
        for (double x : r.regrets) sum += x;
        r.mean_regret = sum / static_cast<double>(r.replicates);
        if (r.replicates > 1) {
          double ss = 0.0;
          for (double x : r.regrets) ss += (x - r.mean_regret) * (x - r.mean_regret);
          r.se = std::sqrt(ss / static_cast<double>(r.replicates - 1) / static_cast<double>(r.replicates));
        } else {
          r.se = std::nan("");
        }
      } else {
        r.mean_regret = std::nan("");
        r.se = std::nan("");
      }
      results.push_back(std::move(r));
    }
  }
  return results;
}

std::vector<ScenarioResult> run_scenario(const ScenarioSpec& scenario, SimulationConfig config) {
  config.scenarios = {scenario};
  return run_simulation(config);
}

std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0) || !(hi >= lo) || count == 0) throw InputError("log grid needs 0 < lo <= hi and count >= 1");
  std::vector<double> out;
  if (count == 1) return {lo};
  const double step = std::log(hi / lo) / static_cast<double>(count - 1);
  for (std::size_t k = 0; k < count; ++k) out.push_back(k + 1 == count ? hi : lo * std::exp(step * static_cast<double>(k)));
  return out;
}

std::vector<std::size_t> log_grid_sizes(std::size_t lo, std::size_t hi, std::size_t count) {
  std::vector<std::size_t> out;
  for (double v : log_grid(static_cast<double>(lo), static_cast<double>(hi), count))
    out.push_back(static_cast<std::size_t>(std::llround(v)));
  return out;
}

void write_results_csv(std::ostream& out, const std::vector<ScenarioResult>& results) {
  out << "scenario,method,retargeted,n,beta,c,q1_test,q2,mean_regret,se,replicates,failures\n";
  for (const auto& r : results) {
    out << r.scenario << ',' << r.method << ',' << (r.retargeted ? "true" : "false") << ',' << r.n << ','
        << format_double(r.beta) << ',' << (r.c ? format_double(*r.c) : std::string()) << ','
        << format_double(r.q1_test) << ',' << format_double(r.q2) << ',' << format_double(r.mean_regret) << ','
        << format_double(r.se) << ',' << r.replicates << ',' << r.failures << '\n';
  }
}

}  // namespace rpl
