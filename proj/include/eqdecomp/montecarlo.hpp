#pragma once

// Simulation evaluation of the identification formulas with fitted models:
// covariates are resampled from each group's rows (reweighted to the
// standard), the target is drawn from the relevant fitted law, and the
// fitted outcome mean is averaged.

#include <algorithm>
#include <vector>

#include "estimator.hpp"

namespace eqdecomp {

struct MonteCarloOptions {
  Standardization standardization = Standardization::Pooled;
  Factorization factorization = Factorization::Standard;
  std::size_t draws = 100'000;
  std::uint64_t seed = 0;
  std::size_t workers = default_workers();
};

inline constexpr std::size_t kMonteCarloChunk = 1 << 15;

namespace detail {

// One simulated group: resampling mass per row, target law per row, and the
// outcome mean at each target level per row.
struct SimulatedGroup {
  std::vector<double> cumulative;  // cumulative resampling mass
  Eigen::MatrixXd target;          // rows x target levels
  Eigen::MatrixXd outcome;         // rows x target levels

  double run(std::size_t draws, std::uint64_t seed, std::uint64_t domain, std::size_t workers) const {
    const std::size_t chunks = (draws + kMonteCarloChunk - 1) / kMonteCarloChunk;
    std::vector<double> sums(chunks, 0.0);
    const double total = cumulative.back();
    parallel_for(chunks, workers, [&](std::size_t c) {
      Rng rng(seed, c, domain);
      const std::size_t count = std::min(kMonteCarloChunk, draws - c * kMonteCarloChunk);
      double s = 0.0;
      for (std::size_t k = 0; k < count; ++k) {
        const double u = rng.uniform() * total;
        auto row = static_cast<std::size_t>(
            std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
        row = std::min(row, cumulative.size() - 1);
        const auto i = static_cast<Eigen::Index>(row);
        double v = rng.uniform();
        Eigen::Index m = 0;
        for (; m + 1 < target.cols(); ++m) {
          v -= target(i, m);
          if (v < 0.0) break;
        }
        s += outcome(i, m);
      }
      sums[c] = s;
    });
    double s = 0.0;
    for (double x : sums) s += x;
    return s / static_cast<double>(draws);
  }
};

inline SimulatedGroup simulated_group(const CohortView& view, const std::vector<std::size_t>& rows,
                                      const RoleBindings& roles, const FittedModel& race_ay,
                                      const FittedModel& target, const FittedModel& outcome,
                                      Group g, Standardization s) {
  SimulatedGroup out;
  const CohortTable sub = view.data.subset(rows);
  const Eigen::MatrixXd race = predict_proba(race_ay, sub);
  const Eigen::MatrixXd P = predict_proba(target, sub);
  const auto& mcol = sub.column(roles.target);
  out.target = P;
  out.outcome.resize(P.rows(), P.cols());
  for (std::size_t l = 0; l < mcol.levels.size(); ++l)
    out.outcome.col(static_cast<Eigen::Index>(l)) =
        predict_mean(outcome, sub.with_constant(roles.target, static_cast<std::uint32_t>(l)));
  double acc = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const double p = race(i, view.r0_code);
    if (!std::isfinite(p) || !(p > 0.0) || !(p < 1.0))
      throw PositivityError("P(r0 | outcome-allowables) is not inside (0, 1) at cohort row " +
                            std::to_string(rows[k] + 1));
    for (Eigen::Index m = 0; m < P.cols(); ++m) {
      if (!std::isfinite(P(i, m)))
        throw PositivityError("target law of '" + target.spec.response +
                              "' is undefined at cohort row " + std::to_string(rows[k] + 1));
      // Levels the law never assigns contribute nothing, even if the
      // outcome model cannot be evaluated there.
      if (P(i, m) == 0.0) out.outcome(i, m) = 0.0;
      else if (!std::isfinite(out.outcome(i, m)))
        throw PositivityError("outcome mean is undefined at cohort row " + std::to_string(rows[k] + 1) +
                              " with " + roles.target + "=" + mcol.levels[static_cast<std::size_t>(m)]);
    }
    acc += sub.case_weight(k) * standardization_factor(p, view.p_r0, g, s);
    out.cumulative.push_back(acc);
  }
  if (out.cumulative.empty() || !(acc > 0.0)) throw ValidationError("simulated group has no rows");
  return out;
}

}  // namespace detail

/// Simulation estimate of the three group means from fitted models. Model
/// roles: race_ay, target_r0, target_r0prime, outcome_r0, outcome_r0prime;
/// the alternate factorization also needs target_r0prime_full and
/// outcome_r0prime_full.
inline DecompositionEstimate decompose_montecarlo(const ModelSet& models, const CohortTable& data,
                                                  const RoleBindings& roles,
                                                  const AllowabilityPartition& p,
                                                  const MonteCarloOptions& opt) {
  if (opt.draws < 1) throw ValidationError("Monte Carlo draws must be >= 1");
  auto need = [&](const std::string& role) -> const FittedModel& {
    const auto it = models.find(role);
    if (it == models.end()) throw ValidationError("model '" + role + "' has not been fitted");
    return it->second;
  };
  const auto view = prepare_cohort(data, roles, p);
  const auto& race = need("race_ay");
  const auto s = opt.standardization;
  const auto r0 = detail::simulated_group(view, view.r0_rows, roles, race, need("target_r0"),
                                          need("outcome_r0"), Group::R0, s);
  const auto cf = detail::simulated_group(view, view.r0_rows, roles, race, need("target_r0prime"),
                                          need("outcome_r0"), Group::R0, s);
  const bool alternate = opt.factorization == Factorization::Alternate;
  const auto r1 = detail::simulated_group(
      view, view.r1_rows, roles, race, need(alternate ? "target_r0prime_full" : "target_r0prime"),
      need(alternate ? "outcome_r0prime_full" : "outcome_r0prime"), Group::R0Prime, s);
  // Common random numbers across the three means.
  const double m0 = r0.run(opt.draws, opt.seed, 1, opt.workers);
  const double mcf = cf.run(opt.draws, opt.seed, 1, opt.workers);
  const double m1 = r1.run(opt.draws, opt.seed, 2, opt.workers);
  return DecompositionEstimate::from_means(m0, m1, mcf, s, Backend::MonteCarloG);
}

/// Fits the Monte Carlo model set with the given configuration and runs it.
inline DecompositionEstimate decompose_montecarlo(const CohortTable& data, const RoleBindings& roles,
                                                  const AllowabilityPartition& p,
                                                  const ModelConfig& config,
                                                  const MonteCarloOptions& opt) {
  const auto view = prepare_cohort(data, roles, p);
  const auto models = fit_models(Backend::MonteCarloG, roles, p, view.data, config, opt.factorization);
  RoleBindings cohort_roles = roles;
  cohort_roles.selection.reset();
  return decompose_montecarlo(models, view.data, cohort_roles, p, opt);
}

}  // namespace eqdecomp
