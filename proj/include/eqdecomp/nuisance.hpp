#pragma once

// Conditional-probability models for the sample backends: binary and
// multinomial logistic regression by Newton/IRLS, weighted least squares,
// and saturated frequency tables.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cohort.hpp"
#include "errors.hpp"

namespace eqdecomp {

enum class Family { BinaryLogit, MultinomialLogit, Linear, Saturated };

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::BinaryLogit: return "binary-logit";
    case Family::MultinomialLogit: return "multinomial-logit";
    case Family::Linear: return "linear";
    case Family::Saturated: return "saturated";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  if (s == "binary-logit" || s == "logit" || s == "logistic") return Family::BinaryLogit;
  if (s == "multinomial-logit" || s == "multinomial") return Family::MultinomialLogit;
  if (s == "linear") return Family::Linear;
  if (s == "saturated") return Family::Saturated;
  throw ValidationError("unknown model family '" + std::string(s) + "'");
}

struct FitGroup {
  std::string variable;
  std::string level;
};

struct ModelSpec {
  std::string response;
  std::vector<std::string> predictors;
  std::vector<std::vector<std::string>> interactions;
  Family family = Family::BinaryLogit;
  std::optional<FitGroup> fit_group;

  void validate() const {
    if (response.empty()) throw ValidationError("model without a response");
    for (std::size_t i = 0; i < predictors.size(); ++i) {
      if (predictors[i] == response)
        throw ValidationError("model for '" + response + "' uses its response as a predictor");
      for (std::size_t j = 0; j < i; ++j)
        if (predictors[i] == predictors[j])
          throw ValidationError("model for '" + response + "' repeats predictor '" + predictors[i] +
                                "'");
    }
    for (const auto& term : interactions) {
      if (term.size() < 2)
        throw ValidationError("interaction in model for '" + response + "' needs two members");
      for (const auto& member : term)
        if (std::find(predictors.begin(), predictors.end(), member) == predictors.end())
          throw ValidationError("interaction member '" + member + "' is not a predictor of '" +
                                response + "'");
    }
  }
};

inline constexpr int kMaxIterations = 100;
inline constexpr double kStepTolerance = 1e-10;
inline constexpr double kGradientTolerance = 1e-8;
inline constexpr double kRidge = 1e-8;

/// Column encoding learned from fit data: intercept, one dummy per
/// non-reference observed level of a categorical predictor, the raw value of
/// a numeric predictor, and elementwise products for interactions.
class Design {
 public:
  Design() = default;

  Design(const ModelSpec& spec, const CohortTable& data, std::span<const std::size_t> rows,
         std::span<const double> w) {
    for (const auto& name : spec.predictors) {
      const auto& col = data.column(name);
      Factor f{name, col.categorical(), {}, col.levels, std::nullopt};
      if (f.categorical) {
        std::vector<double> mass(col.levels.size(), 0.0);
        for (std::size_t k = 0; k < rows.size(); ++k) mass[col.codes[rows[k]]] += w[k];
        bool reference = true;
        for (std::size_t l = 0; l < mass.size(); ++l) {
          if (!(mass[l] > 0.0)) continue;
          if (reference) {
            f.reference = l;
            reference = false;
          } else {
            f.dummies.push_back(static_cast<std::uint32_t>(l));
          }
        }
      }
      factors_.push_back(std::move(f));
    }
    for (std::size_t i = 0; i < factors_.size(); ++i) terms_.push_back({i});
    for (const auto& term : spec.interactions) {
      std::vector<std::size_t> ids;
      for (const auto& member : term)
        ids.push_back(static_cast<std::size_t>(
            std::find(spec.predictors.begin(), spec.predictors.end(), member) -
            spec.predictors.begin()));
      terms_.push_back(std::move(ids));
    }
    names_.push_back("(intercept)");
    for (const auto& t : terms_) {
      std::vector<std::string> labels{""};
      for (auto id : t) {
        std::vector<std::string> next;
        for (const auto& prefix : labels)
          for (const auto& part : factor_labels(factors_[id]))
            next.push_back(prefix.empty() ? part : prefix + ":" + part);
        labels = std::move(next);
      }
      names_.insert(names_.end(), labels.begin(), labels.end());
    }
  }

  std::size_t columns() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  Eigen::MatrixXd matrix(const CohortTable& data, std::span<const std::size_t> rows,
                         const std::string& model_name) const {
    Eigen::MatrixXd X(rows.size(), names_.size());
    std::vector<const Column*> cols;
    for (const auto& f : factors_) cols.push_back(&data.column(f.column));
    std::vector<std::vector<double>> enc(factors_.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const std::size_t r = rows[k];
      for (std::size_t i = 0; i < factors_.size(); ++i) encode(factors_[i], *cols[i], r, enc[i], model_name);
      std::size_t c = 0;
      X(k, c++) = 1.0;
      for (const auto& t : terms_) {
        // Cartesian product of member encodings, first member most significant.
        std::size_t total = 1;
        for (auto id : t) total *= enc[id].size();
        for (std::size_t combo = 0; combo < total; ++combo) {
          double v = 1.0;
          std::size_t rest = combo;
          for (std::size_t j = t.size(); j-- > 0;) {
            const auto& e = enc[t[j]];
            v *= e[rest % e.size()];
            rest /= e.size();
          }
          X(k, c++) = v;
        }
      }
    }
    return X;
  }

 private:
  struct Factor {
    std::string column;
    bool categorical;
    std::vector<std::uint32_t> dummies;
    std::vector<std::string> levels;
    std::optional<std::size_t> reference;
  };

  static std::vector<std::string> factor_labels(const Factor& f) {
    if (!f.categorical) return {f.column};
    std::vector<std::string> out;
    for (auto l : f.dummies) out.push_back(f.column + "=" + f.levels[l]);
    return out;
  }

  static void encode(const Factor& f, const Column& col, std::size_t row, std::vector<double>& out,
                     const std::string& model_name) {
    if (!f.categorical) {
      if (col.categorical()) throw SchemaError("predictor '" + f.column + "' changed type");
      out.assign(1, col.values[row]);
      return;
    }
    if (!col.categorical()) throw SchemaError("predictor '" + f.column + "' changed type");
    const auto code = col.codes[row];
    out.assign(f.dummies.size(), 0.0);
    if (f.reference && code == *f.reference) return;
    for (std::size_t i = 0; i < f.dummies.size(); ++i)
      if (f.dummies[i] == code) {
        out[i] = 1.0;
        return;
      }
    throw PositivityError("level '" + col.levels[code] + "' of predictor '" + f.column +
                          "' never occurs in the fit data of the model for " + model_name);
  }

  std::vector<Factor> factors_;
  std::vector<std::vector<std::size_t>> terms_;
  std::vector<std::string> names_;
};

/// Mean weighted log-likelihood of a (K-class) multinomial logit, with its
/// gradient and information in the flattened parameter vector
/// beta[(k-1)*p + j], k = 1..K-1 (class 0 is the reference).
class LogitProblem {
 public:
  LogitProblem(Eigen::MatrixXd X, std::vector<int> y, Eigen::VectorXd w, int classes)
      : X_(std::move(X)), y_(std::move(y)), w_(std::move(w)), K_(classes) {
    total_ = w_.sum();
  }

  int classes() const noexcept { return K_; }
  Eigen::Index parameters() const noexcept { return X_.cols() * (K_ - 1); }
  const Eigen::MatrixXd& design() const noexcept { return X_; }

  // n x (K-1) probabilities of the non-reference classes.
  Eigen::MatrixXd probabilities(const Eigen::VectorXd& beta) const {
    const Eigen::Index p = X_.cols();
    Eigen::MatrixXd B = Eigen::Map<const Eigen::MatrixXd>(beta.data(), p, K_ - 1);
    Eigen::MatrixXd eta = X_ * B;
    for (Eigen::Index i = 0; i < eta.rows(); ++i) {
      const double top = std::max(0.0, eta.row(i).maxCoeff());
      double denom = std::exp(-top);
      for (Eigen::Index k = 0; k < eta.cols(); ++k) {
        eta(i, k) = std::exp(eta(i, k) - top);
        denom += eta(i, k);
      }
      eta.row(i) /= denom;
    }
    return eta;
  }

  double value(const Eigen::VectorXd& beta) const {
    const Eigen::Index p = X_.cols();
    Eigen::MatrixXd B = Eigen::Map<const Eigen::MatrixXd>(beta.data(), p, K_ - 1);
    const Eigen::MatrixXd eta = X_ * B;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.rows(); ++i) {
      const double top = std::max(0.0, eta.row(i).maxCoeff());
      double s = std::exp(-top);
      for (Eigen::Index k = 0; k < eta.cols(); ++k) s += std::exp(eta(i, k) - top);
      const double own = y_[i] == 0 ? 0.0 : eta(i, y_[i] - 1);
      ll += w_[i] * (own - top - std::log(s));
    }
    return ll / total_;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& beta) const {
    return gradient_from(probabilities(beta));
  }

  Eigen::VectorXd gradient_from(const Eigen::MatrixXd& P) const {
    Eigen::MatrixXd R = -P;
    for (Eigen::Index i = 0; i < R.rows(); ++i)
      if (y_[i] > 0) R(i, y_[i] - 1) += 1.0;
    R.array().colwise() *= w_.array();
    Eigen::MatrixXd G = X_.transpose() * R / total_;
    return Eigen::Map<Eigen::VectorXd>(G.data(), G.size());
  }

  // Some row is fitted to its observed class with certainty: the likelihood
  // has no finite maximizer in that direction.
  bool separated(const Eigen::VectorXd& beta) const {
    const Eigen::MatrixXd P = probabilities(beta);
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
      const double own = y_[i] == 0 ? 1.0 - P.row(i).sum() : P(i, y_[i] - 1);
      if (own > 1.0 - 1e-8) return true;
    }
    return false;
  }

  // Negative Hessian of the mean log-likelihood.
  Eigen::MatrixXd information_from(const Eigen::MatrixXd& P) const {
    const Eigen::Index p = X_.cols();
    const int q = K_ - 1;
    Eigen::MatrixXd H(p * q, p * q);
    for (int a = 0; a < q; ++a)
      for (int b = a; b < q; ++b) {
        Eigen::VectorXd d = -P.col(a).cwiseProduct(P.col(b));
        if (a == b) d += P.col(a);
        d.array() *= w_.array() / total_;
        Eigen::MatrixXd block = X_.transpose() * (X_.array().colwise() * d.array()).matrix();
        H.block(a * p, b * p, p, p) = block;
        if (a != b) H.block(b * p, a * p, p, p) = block.transpose();
      }
    return H;
  }

 private:
  Eigen::MatrixXd X_;
  std::vector<int> y_;
  Eigen::VectorXd w_;
  int K_;
  double total_ = 0.0;
};

struct FittedModel {
  ModelSpec spec;
  std::string response_name;
  std::vector<std::string> response_levels;     // declared levels (categorical response)
  std::vector<std::size_t> modeled_levels;      // observed levels; the first is the reference
  Design design;
  Eigen::MatrixXd coefficients;                 // p x (K-1) for logits, p x 1 for linear
  double sigma2 = 0.0;                          // linear residual variance
  bool converged = false;
  bool ridge = false;
  int iterations = 0;
  double log_likelihood = 0.0;
  std::vector<IterationRecord> trace;
  std::vector<std::string> warnings;

  // Saturated family.
  std::vector<std::string> conditioning;
  std::vector<std::uint64_t> radix;
  std::unordered_map<std::uint64_t, std::vector<double>> table;

  std::string label() const {
    std::string out = spec.response + " ~ ";
    if (spec.predictors.empty()) out += "1";
    for (std::size_t i = 0; i < spec.predictors.size(); ++i)
      out += (i ? " + " : "") + spec.predictors[i];
    for (const auto& t : spec.interactions) {
      out += " + ";
      for (std::size_t i = 0; i < t.size(); ++i) out += (i ? ":" : "") + t[i];
    }
    if (spec.fit_group) out += " | " + spec.fit_group->variable + "=" + spec.fit_group->level;
    return out;
  }
};

namespace detail {

inline std::vector<std::size_t> fit_rows(const ModelSpec& spec, const CohortTable& data,
                                         std::span<const double> row_weights,
                                         std::vector<double>& w) {
  if (!row_weights.empty() && row_weights.size() != data.rows())
    throw SchemaError("row weight count differs from row count");
  std::optional<std::uint32_t> group_code;
  const Column* group = nullptr;
  if (spec.fit_group) {
    group = &data.column(spec.fit_group->variable);
    if (!group->categorical())
      throw SchemaError("fit group column '" + group->name + "' is not categorical");
    group_code = group->code_of(spec.fit_group->level);
  }
  std::vector<std::size_t> rows;
  w.clear();
  for (std::size_t i = 0; i < data.rows(); ++i) {
    if (group && group->codes[i] != *group_code) continue;
    double wi = data.case_weight(i);
    if (!row_weights.empty()) {
      if (!(row_weights[i] >= 0.0) || !std::isfinite(row_weights[i]))
        throw ValidationError("row weights must be finite and >= 0");
      wi *= row_weights[i];
    }
    if (!(wi > 0.0)) continue;
    rows.push_back(i);
    w.push_back(wi);
  }
  return rows;
}

inline std::string where(const ModelSpec& spec) {
  return spec.fit_group ? " among " + spec.fit_group->variable + "=" + spec.fit_group->level : "";
}

struct NewtonResult {
  Eigen::VectorXd beta;
  bool converged = false;
  bool singular = false;
  int iterations = 0;
  double value = 0.0;
  std::vector<IterationRecord> trace;
};

// Maximizes value(beta) - ridge/2 * |beta without intercepts|^2.
inline NewtonResult newton(const LogitProblem& problem, Eigen::VectorXd beta, double ridge) {
  const Eigen::Index p = problem.design().cols();
  const Eigen::Index dim = problem.parameters();
  Eigen::VectorXd penalty_mask = Eigen::VectorXd::Ones(dim);
  for (int k = 0; k + 1 < problem.classes(); ++k) penalty_mask[k * p] = 0.0;
  auto objective = [&](const Eigen::VectorXd& b) {
    return problem.value(b) - 0.5 * ridge * (penalty_mask.array() * b.array().square()).sum();
  };

  NewtonResult out;
  double current = objective(beta);
  for (int it = 1; it <= kMaxIterations; ++it) {
    const Eigen::MatrixXd P = problem.probabilities(beta);
    const Eigen::VectorXd g =
        problem.gradient_from(P) - ridge * (penalty_mask.array() * beta.array()).matrix();
    Eigen::MatrixXd H = problem.information_from(P);
    H.diagonal() += ridge * penalty_mask;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    const Eigen::VectorXd D = ldlt.vectorD();
    const double scale = std::max(1e-300, H.diagonal().cwiseAbs().maxCoeff());
    if (ldlt.info() != Eigen::Success || !(D.minCoeff() > 1e-13 * scale)) {
      out.singular = true;
      out.iterations = it;
      out.trace.push_back({it, current, 0.0, g.cwiseAbs().maxCoeff(), ridge > 0.0});
      break;
    }
    Eigen::VectorXd step = ldlt.solve(g);
    double t = 1.0;
    Eigen::VectorXd next = beta + step;
    double candidate = objective(next);
    // Near the optimum the Newton decrement falls below the resolution of
    // the (per-row mean) objective; accept steps within that noise.
    const double noise = 1e-11 * std::max(1.0, std::abs(current));
    for (int half = 0; half < 50 && !(candidate >= current - noise); ++half) {
      t *= 0.5;
      next = beta + t * step;
      candidate = objective(next);
    }
    const double moved = (t * step).cwiseAbs().maxCoeff();
    beta = next;
    current = candidate;
    out.iterations = it;
    const Eigen::VectorXd g_next = problem.gradient(beta) -
                                   ridge * (penalty_mask.array() * beta.array()).matrix();
    const double gnorm = g_next.cwiseAbs().maxCoeff();
    out.trace.push_back({it, current, moved, gnorm, ridge > 0.0});
    if (!std::isfinite(current)) break;
    if (moved <= kStepTolerance * std::max(1.0, beta.cwiseAbs().maxCoeff()) ||
        gnorm <= 1e-14) {
      out.converged = gnorm <= kGradientTolerance;
      break;
    }
  }
  out.beta = beta;
  out.value = current;
  return out;
}

inline Eigen::MatrixXd solve_logit(const ModelSpec& spec, FittedModel& model,
                                   const LogitProblem& problem, Eigen::VectorXd start) {
  auto result = newton(problem, start, 0.0);
  if (result.converged && problem.separated(result.beta)) result.converged = false;
  if (!result.converged) {
    auto trace = result.trace;
    result = newton(problem, start, kRidge);
    trace.insert(trace.end(), result.trace.begin(), result.trace.end());
    if (!result.converged)
      throw NonConvergenceError("logistic model " + model.label() +
                                    " did not converge after ridge fallback",
                                std::move(trace));
    model.ridge = true;
    model.warnings.push_back("ridge penalty " + std::to_string(kRidge) + " applied to " +
                             spec.response + " model (separation or singular design)");
    result.trace = std::move(trace);
  }
  model.converged = true;
  model.iterations = result.iterations;
  model.trace = std::move(result.trace);
  model.log_likelihood = problem.value(result.beta);
  const Eigen::Index p = problem.design().cols();
  return Eigen::Map<const Eigen::MatrixXd>(result.beta.data(), p, problem.classes() - 1);
}

}  // namespace detail

inline FittedModel fit_saturated(const std::string& response, const std::vector<std::string>& conditioning,
                                 const CohortTable& data, std::span<const double> row_weights = {},
                                 std::optional<FitGroup> group = std::nullopt) {
  FittedModel model;
  model.spec.response = response;
  model.spec.predictors = conditioning;
  model.spec.family = Family::Saturated;
  model.spec.fit_group = group;
  model.spec.validate();
  model.response_name = response;
  const auto& y = data.column(response);
  if (!y.categorical()) throw ValidationError("saturated response '" + response + "' is not categorical");
  model.response_levels = y.levels;
  model.conditioning = conditioning;
  std::vector<const Column*> cols;
  std::uint64_t stride = 1;
  for (const auto& c : conditioning) {
    cols.push_back(&data.column(c));
    if (!cols.back()->categorical())
      throw ValidationError("saturated model for '" + response + "' conditions on numeric '" + c + "'");
    model.radix.push_back(stride);
    stride *= cols.back()->levels.size();
  }
  std::vector<double> w;
  const auto rows = detail::fit_rows(model.spec, data, row_weights, w);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::uint64_t key = 0;
    for (std::size_t j = 0; j < cols.size(); ++j) key += cols[j]->codes[rows[k]] * model.radix[j];
    auto& cell = model.table[key];
    if (cell.empty()) cell.assign(y.levels.size(), 0.0);
    cell[y.codes[rows[k]]] += w[k];
  }
  std::vector<double> level_mass(y.levels.size(), 0.0);
  for (auto& [key, cell] : model.table) {
    double total = 0.0;
    for (std::size_t l = 0; l < cell.size(); ++l) {
      total += cell[l];
      level_mass[l] += cell[l];
    }
    for (auto& c : cell) c /= total;
  }
  for (std::size_t l = 0; l < level_mass.size(); ++l)
    if (level_mass[l] > 0.0) model.modeled_levels.push_back(l);
  model.converged = true;
  double ll = 0.0, total = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::uint64_t key = 0;
    for (std::size_t j = 0; j < cols.size(); ++j) key += cols[j]->codes[rows[k]] * model.radix[j];
    ll += w[k] * std::log(model.table[key][y.codes[rows[k]]]);
    total += w[k];
  }
  model.log_likelihood = total > 0.0 ? ll / total : 0.0;
  return model;
}

/// Maximum (weighted) likelihood fit. Case weights of `data` always apply;
/// `row_weights`, when given, multiply them.
inline FittedModel fit(const ModelSpec& spec, const CohortTable& data,
                       std::span<const double> row_weights = {}) {
  spec.validate();
  if (spec.family == Family::Saturated) {
    if (!spec.interactions.empty())
      throw ValidationError("saturated model for '" + spec.response + "' takes no interactions");
    return fit_saturated(spec.response, spec.predictors, data, row_weights, spec.fit_group);
  }
  FittedModel model;
  model.spec = spec;
  model.response_name = spec.response;
  std::vector<double> w;
  const auto rows = detail::fit_rows(spec, data, row_weights, w);
  if (rows.empty())
    throw DegenerateResponseError("no rows to fit the model for '" + spec.response + "'" +
                                  detail::where(spec));
  model.design = Design(spec, data, rows, w);
  const Eigen::MatrixXd X = model.design.matrix(data, rows, "'" + spec.response + "'");
  const Eigen::VectorXd wv = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  const auto& ycol = data.column(spec.response);

  if (spec.family == Family::Linear) {
    Eigen::VectorXd y(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) y[k] = ycol.number(rows[k]);
    const double total = wv.sum();
    Eigen::MatrixXd XtWX = X.transpose() * (X.array().colwise() * wv.array()).matrix() / total;
    const Eigen::VectorXd XtWy = X.transpose() * (wv.array() * y.array()).matrix() / total;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(XtWX);
    const double scale = std::max(1e-300, XtWX.diagonal().cwiseAbs().maxCoeff());
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-13 * scale)) {
      XtWX.diagonal().array() += kRidge;
      XtWX(0, 0) -= kRidge;
      ldlt.compute(XtWX);
      model.ridge = true;
      model.warnings.push_back("ridge penalty applied to linear model for '" + spec.response +
                               "' (singular design)");
    }
    model.coefficients = ldlt.solve(XtWy);
    if (!model.coefficients.allFinite())
      throw NonConvergenceError("linear model for '" + spec.response + "' is singular", {});
    const Eigen::VectorXd resid = y - X * model.coefficients.col(0);
    model.sigma2 = (wv.array() * resid.array().square()).sum() / total;
    const double s2 = std::max(model.sigma2, 1e-300);
    model.log_likelihood = -0.5 * (std::log(2 * std::numbers::pi * s2) + 1.0);
    model.converged = true;
    model.iterations = 1;
    return model;
  }

  if (!ycol.categorical())
    throw ValidationError("logistic response '" + spec.response + "' must be categorical");
  model.response_levels = ycol.levels;
  std::vector<double> mass(ycol.levels.size(), 0.0);
  for (std::size_t k = 0; k < rows.size(); ++k) mass[ycol.codes[rows[k]]] += w[k];
  std::vector<int> class_of(ycol.levels.size(), -1);
  for (std::size_t l = 0; l < mass.size(); ++l)
    if (mass[l] > 0.0) {
      class_of[l] = static_cast<int>(model.modeled_levels.size());
      model.modeled_levels.push_back(l);
    }
  if (model.modeled_levels.size() < 2)
    throw DegenerateResponseError("response '" + spec.response + "' is constant" +
                                  detail::where(spec));
  if (spec.family == Family::BinaryLogit && model.modeled_levels.size() != 2)
    throw ValidationError("binary-logit response '" + spec.response + "' has " +
                          std::to_string(model.modeled_levels.size()) + " observed levels");
  const int K = static_cast<int>(model.modeled_levels.size());
  std::vector<int> y(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) y[k] = class_of[ycol.codes[rows[k]]];
  const LogitProblem problem(X, std::move(y), wv, K);
  // Start at the marginal log-odds, which is the intercept-only optimum.
  Eigen::VectorXd start = Eigen::VectorXd::Zero(problem.parameters());
  for (int k = 1; k < K; ++k)
    start[(k - 1) * X.cols()] = std::log(mass[model.modeled_levels[k]] / mass[model.modeled_levels[0]]);
  model.coefficients = detail::solve_logit(spec, model, problem, start);
  return model;
}

/// Rows x declared response levels. Levels never observed in the fit data
/// get probability 0. Saturated rows whose conditioning cell was empty in the
/// fit data are NaN (undefined).
inline Eigen::MatrixXd predict_proba(const FittedModel& model, const CohortTable& rows) {
  const std::size_t L = model.response_levels.size();
  if (model.spec.family == Family::Linear)
    throw ValidationError("linear model for '" + model.spec.response + "' has no probabilities");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.rows()), L);
  if (model.spec.family == Family::Saturated) {
    std::vector<const Column*> cols;
    for (const auto& c : model.conditioning) cols.push_back(&rows.column(c));
    for (std::size_t i = 0; i < rows.rows(); ++i) {
      std::uint64_t key = 0;
      for (std::size_t j = 0; j < cols.size(); ++j) key += cols[j]->codes[i] * model.radix[j];
      const auto it = model.table.find(key);
      if (it == model.table.end()) {
        out.row(i).setConstant(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      for (std::size_t l = 0; l < L; ++l) out(i, l) = it->second[l];
    }
    return out;
  }
  std::vector<std::size_t> all(rows.rows());
  std::iota(all.begin(), all.end(), 0);
  const Eigen::MatrixXd X = model.design.matrix(rows, all, "'" + model.spec.response + "'");
  const Eigen::MatrixXd eta = X * model.coefficients;
  for (Eigen::Index i = 0; i < eta.rows(); ++i) {
    const double top = std::max(0.0, eta.row(i).maxCoeff());
    double denom = std::exp(-top);
    for (Eigen::Index k = 0; k < eta.cols(); ++k) denom += std::exp(eta(i, k) - top);
    out(i, model.modeled_levels[0]) = std::exp(-top) / denom;
    for (Eigen::Index k = 0; k < eta.cols(); ++k)
      out(i, model.modeled_levels[k + 1]) = std::exp(eta(i, k) - top) / denom;
  }
  return out;
}

/// Conditional mean of a numeric(-labelled) response.
inline Eigen::VectorXd predict_mean(const FittedModel& model, const CohortTable& rows) {
  if (model.spec.family == Family::Linear) {
    std::vector<std::size_t> all(rows.rows());
    std::iota(all.begin(), all.end(), 0);
    return model.design.matrix(rows, all, "'" + model.spec.response + "'") * model.coefficients.col(0);
  }
  const Eigen::MatrixXd P = predict_proba(model, rows);
  const VariableSpec v{model.response_name, model.response_levels};
  Eigen::VectorXd values(static_cast<Eigen::Index>(v.cardinality()));
  for (std::size_t l = 0; l < v.cardinality(); ++l) values[l] = level_value(v, l);
  Eigen::VectorXd out(P.rows());
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index l = 0; l < P.cols(); ++l)
      if (P(i, l) != 0.0) s += P(i, l) * values[l];
    out[i] = s;
  }
  return out;
}

/// The estimation problem behind a logistic fit, rebuilt for inspection
/// (e.g. comparing the analytic score with finite differences).
inline LogitProblem logit_problem(const FittedModel& model, const CohortTable& data,
                                  std::span<const double> row_weights = {}) {
  std::vector<double> w;
  const auto rows = detail::fit_rows(model.spec, data, row_weights, w);
  const auto& ycol = data.column(model.spec.response);
  std::vector<int> class_of(ycol.levels.size(), -1);
  for (std::size_t k = 0; k < model.modeled_levels.size(); ++k)
    class_of[model.modeled_levels[k]] = static_cast<int>(k);
  std::vector<int> y(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) y[k] = class_of[ycol.codes[rows[k]]];
  return LogitProblem(model.design.matrix(data, rows, "'" + model.spec.response + "'"), std::move(y),
                      Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size())),
                      static_cast<int>(model.modeled_levels.size()));
}

inline Eigen::VectorXd flat_coefficients(const FittedModel& model) {
  return Eigen::Map<const Eigen::VectorXd>(model.coefficients.data(), model.coefficients.size());
}

}  // namespace eqdecomp
