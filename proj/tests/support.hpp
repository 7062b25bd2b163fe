#pragma once

// Shared fixtures for the test suite: the 16-cell worked joint, random
// joints over binary covariates, and a brute-force enumeration oracle that
// shares no code with the library's formula evaluators.

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <eqdecomp/dist_core.hpp>
#include <eqdecomp/partition.hpp>

namespace testkit {

using eqdecomp::AllowabilityPartition;
using eqdecomp::Assignment;
using eqdecomp::FiniteJoint;
using eqdecomp::RoleBindings;
using eqdecomp::Standardization;
using eqdecomp::VariableSpec;

inline const std::vector<std::string> kBinary{"0", "1"};

inline RoleBindings worked_roles() {
  RoleBindings roles;
  roles.race = {"R", "b", "w"};
  roles.target = "M";
  roles.outcome = "Y";
  return roles;
}

inline double worked_p_m(bool r0, int a) { return r0 ? 0.2 + 0.2 * a : 0.6 + 0.2 * a; }
inline double worked_p_y(bool r0, int m, int a) { return 0.1 + 0.2 * m + 0.3 * a + (r0 ? 0.1 : 0.0); }

// Variables R (levels w, b), A, M, Y; P(R=b)=0.5, P(A=1)=0.5 independent of R.
inline FiniteJoint worked_joint() {
  std::vector<VariableSpec> vars{{"R", {"w", "b"}}, {"A", kBinary}, {"M", kBinary}, {"Y", kBinary}};
  return FiniteJoint::from_weights(vars, [](const Assignment& x) {
    const bool r0 = x[0] == 1;
    const int a = static_cast<int>(x[1]), m = static_cast<int>(x[2]), y = static_cast<int>(x[3]);
    const double pm = worked_p_m(r0, a);
    const double py = worked_p_y(r0, m, a);
    return 0.5 * 0.5 * (m ? pm : 1 - pm) * (y ? py : 1 - py);
  });
}

// Closed-form values of the worked example computed directly from its
// parameters: {mean_r0, mean_r0prime, mean_cf}.
struct WorkedTruth {
  double mean_r0, mean_r0prime, mean_cf;
};

inline WorkedTruth worked_truth() {
  WorkedTruth t{0, 0, 0};
  for (int a = 0; a <= 1; ++a)
    for (int m = 0; m <= 1; ++m) {
      const double pm0 = m ? worked_p_m(true, a) : 1 - worked_p_m(true, a);
      const double pm1 = m ? worked_p_m(false, a) : 1 - worked_p_m(false, a);
      t.mean_r0 += 0.5 * pm0 * worked_p_y(true, m, a);
      t.mean_r0prime += 0.5 * pm1 * worked_p_y(false, m, a);
      t.mean_cf += 0.5 * pm1 * worked_p_y(true, m, a);
    }
  return t;
}

struct RandomCase {
  FiniteJoint joint;
  RoleBindings roles;
  AllowabilityPartition partition;
};

// Joint over R, covariates X0..X{k-1}, M, Y (all binary) built from random
// conditional factors in sequence, so arbitrary dependence is allowed.
// Every cell is strictly positive unless `sparsity` zeroes some M factors.
inline RandomCase random_case(std::mt19937_64& gen, int min_cov = 2, int max_cov = 4,
                              double sparsity = 0.0) {
  std::uniform_int_distribution<int> count(min_cov, max_cov);
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  std::uniform_int_distribution<int> bucket(0, 2);
  const int k = count(gen);
  std::vector<VariableSpec> vars{{"R", {"w", "b"}}};
  RandomCase out{FiniteJoint({{"z", kBinary}}, {0.5, 0.5}), {}, {}};
  for (int i = 0; i < k; ++i) {
    const std::string name = "X" + std::to_string(i);
    vars.push_back({name, kBinary});
    switch (bucket(gen)) {
      case 0: out.partition.outcome_allowable.push_back(name); break;
      case 1: out.partition.target_allowable_extra.push_back(name); break;
      default: out.partition.non_allowable.push_back(name); break;
    }
  }
  vars.push_back({"M", kBinary});
  vars.push_back({"Y", kBinary});
  const std::size_t d = vars.size();
  // One Bernoulli parameter per (variable, parent configuration).
  std::vector<std::vector<double>> theta(d);
  for (std::size_t v = 0; v < d; ++v) {
    theta[v].resize(std::size_t{1} << v);
    for (auto& p : theta[v]) p = unit(gen);
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (sparsity > 0.0)
    for (auto& p : theta[d - 2])
      if (coin(gen) < sparsity) p = coin(gen) < 0.5 ? 0.0 : 1.0;
  out.joint = FiniteJoint::from_weights(vars, [&](const Assignment& x) {
    double w = 1.0;
    std::size_t parents = 0;
    for (std::size_t v = 0; v < d; ++v) {
      const double p = theta[v][parents];
      w *= x[v] ? p : 1 - p;
      parents = parents | (x[v] << v);
    }
    return w;
  });
  out.roles.race = {"R", "b", "w"};
  out.roles.target = "M";
  out.roles.outcome = "Y";
  return out;
}

/// Brute-force oracle: every probability is a sum over cells with a
/// predicate built from variable names, recomputed on demand.
class Oracle {
 public:
  Oracle(const FiniteJoint& joint, const RoleBindings& roles, const AllowabilityPartition& part)
      : joint_(joint), roles_(roles), part_(part) {
    race_ = joint.index_of(roles.race.variable);
    r0_ = joint.level_index(race_, roles.race.marginalized);
    r1_ = joint.level_index(race_, roles.race.privileged);
    m_ = joint.index_of(roles.target);
    y_ = joint.index_of(roles.outcome);
    for (const auto& n : part.outcome_allowable) ay_.push_back(joint.index_of(n));
    for (const auto& n : part.target_allowable_extra) am_.push_back(joint.index_of(n));
    for (const auto& n : part.non_allowable) n_.push_back(joint.index_of(n));
  }

  using Pred = std::function<bool(const Assignment&)>;

  double prob(const Pred& pred) const {
    double s = 0;
    joint_.for_each_cell([&](const Assignment& a, double p) {
      if (pred(a)) s += p;
    });
    return s;
  }
  double moment(const Pred& pred) const {
    double s = 0;
    joint_.for_each_cell([&](const Assignment& a, double p) {
      if (pred(a)) s += p * std::stod(joint_.variables()[y_].levels[a[y_]]);
    });
    return s;
  }

  static bool same(const Assignment& a, const Assignment& b, const std::vector<std::size_t>& pos) {
    for (auto p : pos)
      if (a[p] != b[p]) return false;
    return true;
  }

  // Standard mass of x's A^y values.
  double standard(const Assignment& x, Standardization s) const {
    const auto ay = [&](const Assignment& a) { return same(a, x, ay_); };
    if (s == Standardization::Pooled) return prob(ay);
    const std::size_t g = s == Standardization::MarginalizedToR0 ? r0_ : r1_;
    return prob([&](const Assignment& a) { return a[race_] == g && ay(a); }) /
           prob([&](const Assignment& a) { return a[race_] == g; });
  }

  // Distinct representative assignments over the given positions.
  std::vector<Assignment> configurations(const std::vector<std::size_t>& pos) const {
    std::vector<Assignment> out;
    joint_.for_each_cell([&](const Assignment& a, double) {
      for (const auto& b : out)
        if (same(a, b, pos)) return;
      out.push_back(a);
    });
    return out;
  }

  double group_mean(std::size_t g, Standardization s) const {
    double total = 0;
    for (const auto& x : configurations(ay_)) {
      const double w = standard(x, s);
      if (w <= 0) continue;
      const auto sel = [&](const Assignment& a) { return a[race_] == g && same(a, x, ay_); };
      total += w * moment(sel) / prob(sel);
    }
    return total;
  }

  double mean_r0(Standardization s) const { return group_mean(r0_, s); }
  double mean_r0prime(Standardization s) const { return group_mean(r1_, s); }

  // E[Y | r0, m, n, am, ay] P(m | r0', am, ay) P(n | r0, am, ay) P(am | r0, ay) S(ay)
  double counterfactual(Standardization s) const {
    std::vector<std::size_t> all = ay_;
    all.insert(all.end(), am_.begin(), am_.end());
    all.insert(all.end(), n_.begin(), n_.end());
    all.push_back(m_);
    std::vector<std::size_t> a_both = ay_;
    a_both.insert(a_both.end(), am_.begin(), am_.end());
    std::vector<std::size_t> cov = a_both;
    cov.insert(cov.end(), n_.begin(), n_.end());
    double total = 0;
    for (const auto& x : configurations(all)) {
      const double w = standard(x, s);
      if (w <= 0) continue;
      auto in = [&](std::size_t g, const std::vector<std::size_t>& pos) {
        return prob([&](const Assignment& a) { return a[race_] == g && same(a, x, pos); });
      };
      std::vector<std::size_t> m_a = a_both;
      m_a.push_back(m_);
      const double p_m = in(r1_, m_a) / in(r1_, a_both);
      if (p_m <= 0) continue;
      const double p_n = in(r0_, cov) / in(r0_, a_both);
      const double p_am = in(r0_, a_both) / in(r0_, ay_);
      if (p_n <= 0 || p_am <= 0) continue;
      const auto sel = [&](const Assignment& a) { return a[race_] == r0_ && same(a, x, all); };
      total += moment(sel) / prob(sel) * p_m * p_n * p_am * w;
    }
    return total;
  }

  std::size_t race() const { return race_; }
  std::size_t r0() const { return r0_; }
  std::size_t r1() const { return r1_; }
  std::size_t target() const { return m_; }
  const std::vector<std::size_t>& ay() const { return ay_; }
  const std::vector<std::size_t>& am() const { return am_; }
  const std::vector<std::size_t>& n() const { return n_; }

 private:
  const FiniteJoint& joint_;
  RoleBindings roles_;
  AllowabilityPartition part_;
  std::size_t race_, r0_, r1_, m_, y_;
  std::vector<std::size_t> ay_, am_, n_;
};

}  // namespace testkit
