#include "rpl/scores.hpp"

#include <cmath>
#include <ostream>

#include "rpl/errors.hpp"
#include "rpl/retarget.hpp"

namespace rpl {

ScoreMethod parse_score_method(std::string_view name) {
  if (name == "unweighted") return ScoreMethod::Unweighted;
  if (name == "ipw") return ScoreMethod::IPW;
  if (name == "dm" || name == "direct") return ScoreMethod::DM;
  if (name == "dr") return ScoreMethod::DR;
  throw InputError("unknown score method '" + std::string(name) + "'");
}

std::string_view to_string(ScoreMethod m) {
  switch (m) {
    case ScoreMethod::Unweighted: return "unweighted";
    case ScoreMethod::IPW: return "ipw";
    case ScoreMethod::DM: return "dm";
    case ScoreMethod::DR: return "dr";
  }
  return "?";
}

RetargetMode parse_retarget_mode(std::string_view name) {
  if (name == "none") return RetargetMode::None;
  if (name == "binary-homoskedastic") return RetargetMode::BinaryHomoskedastic;
  if (name == "multi-homoskedastic") return RetargetMode::MultiHomoskedastic;
  if (name == "optimal") return RetargetMode::Optimal;
  if (name == "bias-lambda") return RetargetMode::BiasLambda;
  if (name == "bias-c") return RetargetMode::BiasC;
  throw InputError("unknown retargeting mode '" + std::string(name) + "'");
}

std::string_view to_string(RetargetMode m) {
  switch (m) {
    case RetargetMode::None: return "none";
    case RetargetMode::BinaryHomoskedastic: return "binary-homoskedastic";
    case RetargetMode::MultiHomoskedastic: return "multi-homoskedastic";
    case RetargetMode::Optimal: return "optimal";
    case RetargetMode::BiasLambda: return "bias-lambda";
    case RetargetMode::BiasC: return "bias-c";
  }
  return "?";
}

namespace {

void check_nuisance(const ObservationSet& data, const NuisanceValues& nv) {
  if (nv.propensity.rows() != static_cast<Eigen::Index>(data.size()) ||
      nv.outcome_mean.rows() != nv.propensity.rows())
    throw InputError("nuisance table has " + std::to_string(nv.propensity.rows()) + " rows, data has " +
                     std::to_string(data.size()));
  if (nv.num_actions() != data.num_actions() || nv.outcome_mean.cols() != nv.propensity.cols())
    throw InputError("nuisance table action count does not match the data");
}

double floored(double p, std::size_t& clipped) {
  if (!(p >= kPropensityFloor)) {
    ++clipped;
    return kPropensityFloor;
  }
  return p;
}

}  // namespace

ScoreMatrix build_scores(const ObservationSet& data, const NuisanceValues& nv, ScoreMethod method) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const int m = data.num_actions();
  if (method != ScoreMethod::Unweighted) check_nuisance(data, nv);
  if (method == ScoreMethod::Unweighted && m != 2)
    throw ContractError("unweighted scores are defined for 2 actions only");

  ScoreMatrix s;
  s.method = method;
  s.multiplier = Vector::Ones(n);
  s.gamma = Matrix::Zero(n, m);
  const auto& actions = data.actions();
  const Vector& y = data.rewards();
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = actions[static_cast<std::size_t>(i)] - 1;
    switch (method) {
      case ScoreMethod::Unweighted:
        s.gamma(i, a) = y(i);
        break;
      case ScoreMethod::IPW:
        s.gamma(i, a) = y(i) / floored(nv.propensity(i, a), s.clipped);
        break;
      case ScoreMethod::DM:
        s.gamma.row(i) = nv.outcome_mean.row(i);
        break;
      case ScoreMethod::DR:
        s.gamma.row(i) = nv.outcome_mean.row(i);
        s.gamma(i, a) += (y(i) - nv.outcome_mean(i, a)) / floored(nv.propensity(i, a), s.clipped);
        break;
    }
  }
  if (!s.gamma.allFinite()) throw SingularityError("scores contain non-finite values");
  return s;
}

Vector retargeting_multiplier(const NuisanceValues& nv, const RetargetSpec& spec) {
  const auto n = nv.propensity.rows();
  const int m = nv.num_actions();
  auto floor_p = [&](Eigen::Index i, int a) { return std::max(nv.propensity(i, a), kPropensityFloor); };
  Vector w(n);
  switch (spec.mode) {
    case RetargetMode::None:
      return Vector::Ones(n);
    case RetargetMode::BinaryHomoskedastic:
      if (m != 2) throw ContractError("binary-homoskedastic retargeting requires 2 actions, got " + std::to_string(m));
      for (Eigen::Index i = 0; i < n; ++i) {
        const double phi = floor_p(i, 1) - floor_p(i, 0);
        w(i) = 1.0 - phi * phi;
      }
      return w;
    case RetargetMode::MultiHomoskedastic:
      if (m < 2) throw ContractError("retargeting requires at least 2 actions");
      for (Eigen::Index i = 0; i < n; ++i) {
        double inv = 0.0;
        for (int a = 0; a < m; ++a) inv += 1.0 / floor_p(i, a);
        w(i) = 1.0 / (inv - static_cast<double>((m - 2) * (m - 2)));
      }
      return w;
    case RetargetMode::Optimal:
      return optimal_multi(nv).weight;
    case RetargetMode::BiasLambda:
      return bias_regularized(nv, spec.parameter).weight;
    case RetargetMode::BiasC: {
      const double c = spec.parameter;
      if (!(c >= 0.0)) throw ContractError("padding parameter c must be >= 0");
      if (c == 0.0) return Vector::Ones(n);
      if (std::isinf(c)) {
        return retargeting_multiplier(
            nv, {m == 2 ? RetargetMode::BinaryHomoskedastic : RetargetMode::MultiHomoskedastic, 0.0});
      }
      if (m == 2) {
        for (Eigen::Index i = 0; i < n; ++i) {
          const double phi = floor_p(i, 1) - floor_p(i, 0);
          const double v = 1.0 - phi * phi;
          w(i) = v / (c + v);
        }
        return w;
      }
      // kappa + 4 lambda^2 with lambda^2 = sigma^2 / c and sigma^2 = 1.
      return bias_regularized(with_unit_variance(nv.propensity, nv.outcome_mean), 1.0 / std::sqrt(c)).weight;
    }
  }
  return Vector::Ones(n);
}

ScoreMatrix apply_retargeting(const ScoreMatrix& scores, const NuisanceValues& nv, const RetargetSpec& spec) {
  if (nv.propensity.rows() != scores.size() || nv.num_actions() != scores.num_actions())
    throw InputError("retargeting: nuisance table does not match the score matrix");
  const Vector w = retargeting_multiplier(nv, spec);
  if (!w.allFinite() || (w.array() < 0.0).any()) throw SingularityError("retargeting multipliers are not finite and nonnegative");
  ScoreMatrix out = scores;
  out.gamma = w.asDiagonal() * scores.gamma;
  out.multiplier = scores.multiplier.cwiseProduct(w);
  out.retargeted = spec.mode != RetargetMode::None;
  if (spec.mode == RetargetMode::BiasC) out.padding = spec.parameter;
  return out;
}

ScoreMatrix normalize(const ScoreMatrix& scores) {
  if (scores.size() == 0) throw InputError("cannot normalize an empty score matrix");
  const double divisor = (scores.gamma.rowwise().maxCoeff() - scores.gamma.rowwise().minCoeff()).mean();
  if (!(divisor > 0.0) || !std::isfinite(divisor))
    throw DegenerateInputError("scores carry no information: every record has equal scores across actions");
  ScoreMatrix out = scores;
  out.gamma /= divisor;
  out.divisor = scores.divisor * divisor;
  return out;
}

double estimate_value(const ScoreMatrix& scores, const Matrix& policy_probs) {
  if (policy_probs.rows() != scores.size() || policy_probs.cols() != scores.num_actions())
    throw InputError("policy table does not match the score matrix");
  return scores.gamma.cwiseProduct(policy_probs).sum() / static_cast<double>(scores.size());
}

double estimate_value(const ScoreMatrix& scores, const PolicyDistribution& policy, const ObservationSet& data) {
  if (policy.num_actions() != scores.num_actions()) throw InputError("policy action count does not match scores");
  return estimate_value(scores, policy.probs(data.covariates()));
}

void write_scores_csv(std::ostream& out, const ScoreMatrix& scores) {
  out << 'i';
  for (int a = 1; a <= scores.num_actions(); ++a) out << ",gamma_" << a;
  out << ",weight_multiplier\n";
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    out << i;
    for (int a = 0; a < scores.num_actions(); ++a) out << ',' << format_double(scores.gamma(i, a));
    out << ',' << format_double(scores.multiplier(i)) << '\n';
  }
}

}  // namespace rpl
