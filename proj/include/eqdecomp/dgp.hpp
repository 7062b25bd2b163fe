#pragma once

// Synthetic hypertension cohort: race, binary covariates, first blood
// pressure L1 with a shared latent U0, treatment intensification M, second
// blood pressure L2, and the thresholded outcomes Y1, Y2. Includes the exact
// discretized joint and an independent simulation of the intervention.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "cohort.hpp"
#include "gformula.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace eqdecomp {

namespace scm {
inline const std::string race = "race";
inline const std::string age = "age";
inline const std::string sex = "sex";
inline const std::string edu = "edu";
inline const std::string ins = "ins";
inline const std::string dia = "dia";
inline const std::string l1 = "L1";
inline const std::string stage = "L1_stage";
inline const std::string y1 = "Y1";
inline const std::string m = "M";
inline const std::string l2 = "L2";
inline const std::string y2 = "Y2";
}  // namespace scm

/// Linear predictor over race (1 = r0) and the binary covariates, with an
/// optional loading on the latent U0.
struct Coefficients {
  double intercept = 0.0;
  double race = 0.0;
  double age = 0.0;
  double sex = 0.0;
  double edu = 0.0;
  double ins = 0.0;
  double dia = 0.0;
  double u = 0.0;
};

struct ScmUnit {
  int r = 0;  // 1 = r0
  int age = 0, sex = 0, edu = 0, ins = 0, dia = 0;
  double u = 0.0;
  double l1 = 0.0;
  int stage = 0;  // 0: below threshold, 1: threshold..stage cut, 2: above stage cut
  int m = 0;
  double l2 = 0.0;
  int y2 = 0;
};

inline double linear(const Coefficients& c, const ScmUnit& x) {
  return c.intercept + c.race * x.r + c.age * x.age + c.sex * x.sex + c.edu * x.edu + c.ins * x.ins +
         c.dia * x.dia + c.u * x.u;
}

inline double logistic(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

struct ScmConfig {
  std::string r0_label = "black";
  std::string r1_label = "white";
  double p_r0 = 0.35;

  Coefficients age{0.2, -0.6};
  Coefficients sex{0.1};
  Coefficients edu{-0.8, 0.9, 0.2};
  Coefficients ins{-1.2, 0.7, -0.3, 0.0, 1.0};
  Coefficients dia{-1.5, 0.5, 0.6, 0.0, 0.4, 0.3};

  Coefficients l1{132.0, 6.0, 5.0, -1.0, 3.0, 2.0, 5.0};
  double sigma_u = 10.0;
  double sigma_l1 = 10.0;

  // M: logit with a stage term; race_edu / race_ins act only among r0.
  Coefficients m{-0.3, -0.5, 0.2, -0.1, 0.0, 0.0, 0.5};
  double m_stage = 0.9;
  double m_race_edu = -0.4;
  double m_race_ins = -0.5;

  Coefficients l2{40.0, 4.0, 3.0, 0.0, 1.0, 1.0, 2.0};
  double l2_l1 = 0.65;
  double l2_m = -12.0;
  double sigma_l2 = 8.0;

  double threshold = 140.0;
  double stage_cut = 160.0;
  bool select = true;
  std::uint64_t seed = 0;

  /// Reference configuration.
  static ScmConfig reference() { return {}; }

  /// Variant with U0 also driving the socioeconomic and clinical covariates.
  static ScmConfig latent_covariates() {
    ScmConfig c;
    c.edu.u = -0.04;
    c.ins.u = -0.03;
    c.dia.u = 0.05;
    return c;
  }

  /// Every race effect removed, so there is no disparity to explain.
  ScmConfig without_race() const {
    ScmConfig c = *this;
    for (auto* eq : {&c.age, &c.sex, &c.edu, &c.ins, &c.dia, &c.l1, &c.m, &c.l2}) eq->race = 0.0;
    c.m_race_edu = 0.0;
    c.m_race_ins = 0.0;
    return c;
  }

  bool latent_on_covariates() const { return edu.u != 0.0 || ins.u != 0.0 || dia.u != 0.0 || age.u != 0.0 || sex.u != 0.0; }

  void validate() const {
    if (!(p_r0 > 0.0 && p_r0 < 1.0)) throw ValidationError("race prevalence must lie in (0, 1)");
    if (!(sigma_u > 0.0) || !(sigma_l1 > 0.0) || !(sigma_l2 > 0.0))
      throw ValidationError("blood pressure noise scales must be > 0");
    if (!(stage_cut > threshold)) throw ValidationError("stage cut must exceed the threshold");
    if (r0_label == r1_label || r0_label.empty() || r1_label.empty())
      throw ValidationError("race labels must be distinct and non-empty");
  }

  std::vector<std::string> stage_levels() const {
    auto f = [](double v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g", v);
      return std::string(buf);
    };
    std::vector<std::string> out;
    if (!select) out.push_back("<" + f(threshold));
    out.push_back(f(threshold) + "-" + f(stage_cut - 1));
    out.push_back(f(stage_cut) + "+");
    return out;
  }

  double m_logit(const ScmUnit& x) const {
    return linear(m, x) + m_stage * (x.stage == 2) + x.r * (m_race_edu * x.edu + m_race_ins * x.ins);
  }

  // Linear part of L2 excluding L1, M and U0.
  double l2_base(const ScmUnit& x) const {
    Coefficients c = l2;
    c.u = 0.0;
    return linear(c, x);
  }

  int stage_of(double v) const { return v < threshold ? 0 : (v < stage_cut ? 1 : 2); }
};

inline RoleBindings scm_roles(const ScmConfig& c) {
  RoleBindings r;
  r.race = {scm::race, c.r0_label, c.r1_label};
  r.target = scm::m;
  r.outcome = scm::y2;
  return r;
}

/// Covariates of the generated cohort with their tags; L1 enters through
/// its clinical stage.
inline std::vector<TaggedVariable> scm_schema() {
  return {{scm::age, CovariateTag::Demographic},   {scm::sex, CovariateTag::Demographic},
          {scm::edu, CovariateTag::Socioeconomic}, {scm::ins, CovariateTag::Socioeconomic},
          {scm::dia, CovariateTag::Clinical},      {scm::stage, CovariateTag::Clinical}};
}

namespace detail {

inline constexpr std::uint64_t kGenerateDomain = 0x6e6e;
inline constexpr std::uint64_t kTruthDomain = 0x7e7e;
inline constexpr std::size_t kGenerateChunk = 4096;

inline ScmUnit draw_unit(const ScmConfig& c, Rng& rng) {
  ScmUnit x;
  x.r = rng.bernoulli(c.p_r0);
  x.u = c.sigma_u * rng.normal();
  x.age = rng.bernoulli(logistic(linear(c.age, x)));
  x.sex = rng.bernoulli(logistic(linear(c.sex, x)));
  x.edu = rng.bernoulli(logistic(linear(c.edu, x)));
  x.ins = rng.bernoulli(logistic(linear(c.ins, x)));
  x.dia = rng.bernoulli(logistic(linear(c.dia, x)));
  {
    Coefficients l1 = c.l1;
    l1.u = 0.0;
    x.l1 = linear(l1, x) + x.u + c.sigma_l1 * rng.normal();
  }
  x.stage = c.stage_of(x.l1);
  x.m = rng.bernoulli(logistic(c.m_logit(x)));
  x.l2 = c.l2_base(x) + c.l2_l1 * x.l1 + c.l2_m * x.m + x.u + c.sigma_l2 * rng.normal();
  x.y2 = x.l2 >= c.threshold;
  return x;
}

// One mixture component of the law of (X, L1, L2): covariates x with mass
// `weight`, L1 | component ~ N(l1_mean, l1_sd), and
// L2 | L1 = l, M = m ~ N(y_intercept + y_slope * l + l2_m * m, y_sd).
struct Component {
  ScmUnit x;
  double weight = 0.0;
  double l1_mean = 0.0, l1_sd = 1.0;
  double y_intercept = 0.0, y_slope = 0.0, y_sd = 1.0;
};

inline double p_binary(const Coefficients& c, const ScmUnit& x, int value) {
  const double p = logistic(linear(c, x));
  return value ? p : 1.0 - p;
}

inline std::vector<Component> components(const ScmConfig& c) {
  std::vector<Component> out;
  auto covariate_mass = [&](ScmUnit& x) {
    return (x.r ? c.p_r0 : 1.0 - c.p_r0) * p_binary(c.age, x, x.age) * p_binary(c.sex, x, x.sex) *
           p_binary(c.edu, x, x.edu) * p_binary(c.ins, x, x.ins) * p_binary(c.dia, x, x.dia);
  };
  auto l1_mean = [&](const ScmUnit& x) {
    Coefficients l1 = c.l1;
    l1.u = 0.0;
    return linear(l1, x);
  };
  auto each_x = [&](auto&& fn) {
    for (int code = 0; code < 64; ++code) {
      ScmUnit x;
      x.r = code & 1;
      x.age = (code >> 1) & 1;
      x.sex = (code >> 2) & 1;
      x.edu = (code >> 3) & 1;
      x.ins = (code >> 4) & 1;
      x.dia = (code >> 5) & 1;
      fn(x);
    }
  };
  const double su2 = c.sigma_u * c.sigma_u, s12 = c.sigma_l1 * c.sigma_l1;
  if (!c.latent_on_covariates()) {
    const double k = su2 / (su2 + s12);
    each_x([&](ScmUnit x) {
      Component comp;
      comp.x = x;
      comp.weight = covariate_mass(x);
      comp.l1_mean = l1_mean(x);
      comp.l1_sd = std::sqrt(su2 + s12);
      comp.y_intercept = c.l2_base(x) - k * comp.l1_mean;
      comp.y_slope = c.l2_l1 + k;
      comp.y_sd = std::sqrt(su2 * s12 / (su2 + s12) + c.sigma_l2 * c.sigma_l2);
      out.push_back(comp);
    });
    return out;
  }
  // Latent on covariates: integrate U0 = sigma_u z with Gauss-Legendre
  // panels on z in [-8, 8].
  using Rule = boost::math::quadrature::gauss<double, 20>;
  constexpr int panels = 16;
  const double width = 16.0 / panels;
  for (int p = 0; p < panels; ++p) {
    const double mid = -8.0 + (p + 0.5) * width;
    const auto& abscissa = Rule::abscissa();
    const auto& weights = Rule::weights();
    for (std::size_t j = 0; j < abscissa.size(); ++j)
      for (int sign : {-1, 1}) {
        if (j == 0 && sign == 1 && abscissa[0] == 0.0) continue;
        const double z = mid + sign * abscissa[j] * width / 2;
        const double wz = weights[j] * width / 2 * std::exp(-z * z / 2) / std::sqrt(2 * std::numbers::pi);
        each_x([&](ScmUnit x) {
          x.u = c.sigma_u * z;
          Component comp;
          comp.x = x;
          comp.weight = wz * covariate_mass(x);
          comp.l1_mean = l1_mean(x) + x.u;
          comp.l1_sd = c.sigma_l1;
          comp.y_intercept = c.l2_base(x) + x.u;
          comp.y_slope = c.l2_l1;
          comp.y_sd = c.sigma_l2;
          out.push_back(comp);
        });
      }
  }
  return out;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// P(lo <= L1 < hi) for a component.
inline double segment_mass(const Component& comp, double lo, double hi) {
  const double a = (lo - comp.l1_mean) / comp.l1_sd, b = (hi - comp.l1_mean) / comp.l1_sd;
  if (a > 0.0) return normal_cdf(-a) - normal_cdf(-b);
  return normal_cdf(b) - normal_cdf(a);
}

// P(lo <= L1 < hi, L2 >= cut | component, M = m).
inline double segment_outcome_mass(const ScmConfig& c, const Component& comp, int m, double lo, double hi) {
  const double span = 12.0 * comp.l1_sd;
  lo = std::max(lo, comp.l1_mean - span);
  hi = std::min(hi, comp.l1_mean + span);
  if (!(hi > lo)) return 0.0;
  const double shift = comp.y_intercept + c.l2_m * m - c.threshold;
  auto f = [&](double l) {
    const double z = (l - comp.l1_mean) / comp.l1_sd;
    const double density = std::exp(-z * z / 2) / (comp.l1_sd * std::sqrt(2 * std::numbers::pi));
    return density * normal_cdf((shift + comp.y_slope * l) / comp.y_sd);
  };
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, lo, hi, 12, 1e-13);
}

inline double selection_probability(const ScmConfig& c, const std::vector<Component>& comps) {
  double s = 0.0;
  for (const auto& comp : comps) s += comp.weight * segment_mass(comp, c.threshold, INFINITY);
  return s;
}

inline std::string format_edge(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace detail

/// Probability that a drawn unit enters the cohort (1 without selection).
inline double selection_probability(const ScmConfig& c) {
  c.validate();
  return c.select ? detail::selection_probability(c, detail::components(c)) : 1.0;
}

inline CohortTable cohort_from_units(const ScmConfig& c, const std::vector<ScmUnit>& units) {
  const std::vector<std::string> binary{"0", "1"};
  auto codes = [&](auto get) {
    std::vector<std::uint32_t> out;
    out.reserve(units.size());
    for (const auto& x : units) out.push_back(static_cast<std::uint32_t>(get(x)));
    return out;
  };
  const int stage_offset = c.select ? 1 : 0;
  CohortTable t;
  t.add_categorical(scm::race, {c.r1_label, c.r0_label}, codes([](const ScmUnit& x) { return x.r; }));
  t.add_categorical(scm::age, binary, codes([](const ScmUnit& x) { return x.age; }));
  t.add_categorical(scm::sex, binary, codes([](const ScmUnit& x) { return x.sex; }));
  t.add_categorical(scm::edu, binary, codes([](const ScmUnit& x) { return x.edu; }));
  t.add_categorical(scm::ins, binary, codes([](const ScmUnit& x) { return x.ins; }));
  t.add_categorical(scm::dia, binary, codes([](const ScmUnit& x) { return x.dia; }));
  std::vector<double> l1, l2;
  for (const auto& x : units) {
    l1.push_back(x.l1);
    l2.push_back(x.l2);
  }
  t.add_numeric(scm::l1, std::move(l1));
  t.add_categorical(scm::stage, c.stage_levels(),
                    codes([&](const ScmUnit& x) { return x.stage - stage_offset; }));
  t.add_categorical(scm::y1, binary, codes([](const ScmUnit& x) { return x.stage > 0; }));
  t.add_categorical(scm::m, binary, codes([](const ScmUnit& x) { return x.m; }));
  t.add_numeric(scm::l2, std::move(l2));
  t.add_categorical(scm::y2, binary, codes([](const ScmUnit& x) { return x.y2; }));
  return t;
}

/// Units drawn from the SCM in fixed-size chunks seeded by (seed, chunk,
/// domain); with selection on, only units with Y1 = 1 are kept, in chunk
/// order, until n are collected.
inline std::vector<ScmUnit> draw_units(const ScmConfig& c, std::size_t n, std::uint64_t seed,
                                       std::uint64_t domain, std::size_t workers = default_workers()) {
  c.validate();
  if (n < 1) throw ValidationError("cohort size must be >= 1");
  if (c.select) {
    const double p = selection_probability(c);
    if (p < 1e-4)
      throw InfeasibleCohortError("selection probability " + std::to_string(p) + " is below 1e-4");
  }
  std::vector<ScmUnit> out;
  out.reserve(n);
  std::size_t next_chunk = 0;
  const std::size_t batch = std::max<std::size_t>(1, workers) * 4;
  while (out.size() < n) {
    std::vector<std::vector<ScmUnit>> chunks(batch);
    parallel_for(batch, workers, [&](std::size_t b) {
      Rng rng(seed, next_chunk + b, domain);
      auto& units = chunks[b];
      units.reserve(detail::kGenerateChunk);
      for (std::size_t k = 0; k < detail::kGenerateChunk; ++k) {
        const auto x = detail::draw_unit(c, rng);
        if (!c.select || x.stage > 0) units.push_back(x);
      }
    });
    next_chunk += batch;
    for (auto& units : chunks)
      for (const auto& x : units) {
        if (out.size() == n) break;
        out.push_back(x);
      }
  }
  return out;
}

inline CohortTable generate(const ScmConfig& c, std::size_t n, std::size_t workers = default_workers()) {
  return cohort_from_units(c, draw_units(c, n, c.seed, detail::kGenerateDomain, workers));
}

/// Interior L1 cutpoints giving `count` equal-probability bins within the
/// cohort, merged with the threshold and stage cut.
inline std::vector<double> default_bins(const ScmConfig& c, int count = 8) {
  c.validate();
  const auto comps = detail::components(c);
  const double floor = c.select ? c.threshold : -INFINITY;
  auto cdf = [&](double l) {
    double s = 0.0;
    for (const auto& comp : comps) s += comp.weight * detail::segment_mass(comp, floor, l);
    return s;
  };
  const double total = cdf(INFINITY);
  std::vector<double> edges;
  for (int k = 1; k < count; ++k) {
    const double target = total * k / count;
    double lo = c.select ? c.threshold : 0.0, hi = 400.0;
    for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
      const double mid = 0.5 * (lo + hi);
      (cdf(mid) < target ? lo : hi) = mid;
    }
    edges.push_back(0.5 * (lo + hi));
  }
  edges.push_back(c.stage_cut);
  if (!c.select) edges.push_back(c.threshold);
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end(), [](double a, double b) { return std::abs(a - b) < 1e-9; }),
              edges.end());
  return edges;
}

/// Exact joint over race, the binary covariates, the L1 bin, L1 stage, Y1,
/// M and Y2, by numerical integration over each bin. `edges` are interior
/// cutpoints; with selection on they must not lie below the threshold and
/// the joint is conditional on Y1 = 1.
inline FiniteJoint discretize_to_joint(const ScmConfig& c, std::vector<double> edges) {
  c.validate();
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw ValidationError("L1 bin edges must be strictly increasing");
  if (c.select) {
    for (double e : edges)
      if (e < c.threshold) throw ValidationError("L1 bin edge " + detail::format_edge(e) +
                                                  " lies below the selection threshold");
    if (!edges.empty() && edges.front() == c.threshold) edges.erase(edges.begin());
  }
  // Bins [b_k, b_{k+1}).
  std::vector<double> bounds{c.select ? c.threshold : -INFINITY};
  bounds.insert(bounds.end(), edges.begin(), edges.end());
  bounds.push_back(INFINITY);
  std::vector<std::string> bin_labels;
  for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
    if (std::isinf(bounds[k]) && std::isinf(bounds[k + 1])) bin_labels.push_back("all");
    else if (std::isinf(bounds[k])) bin_labels.push_back("<" + detail::format_edge(bounds[k + 1]));
    else if (std::isinf(bounds[k + 1])) bin_labels.push_back(detail::format_edge(bounds[k]) + "+");
    else
      bin_labels.push_back("[" + detail::format_edge(bounds[k]) + "," + detail::format_edge(bounds[k + 1]) + ")");
  }
  // Elementary segments split at the threshold and stage cut.
  struct Segment {
    double lo, hi;
    std::size_t bin;
    int stage;
  };
  std::vector<Segment> segments;
  for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
    std::vector<double> cuts{bounds[k]};
    for (double x : {c.threshold, c.stage_cut})
      if (x > bounds[k] && x < bounds[k + 1]) cuts.push_back(x);
    cuts.push_back(bounds[k + 1]);
    for (std::size_t j = 0; j + 1 < cuts.size(); ++j)
      segments.push_back({cuts[j], cuts[j + 1], k, c.stage_of(std::isinf(cuts[j]) ? cuts[j + 1] - 1 : cuts[j])});
  }

  const std::vector<std::string> binary{"0", "1"};
  const auto stage_levels = c.stage_levels();
  const int stage_offset = c.select ? 1 : 0;
  if (bin_labels.size() == 1) bin_labels.push_back("unused");
  std::vector<VariableSpec> vars{{scm::race, {c.r1_label, c.r0_label}},
                                 {scm::age, binary},
                                 {scm::sex, binary},
                                 {scm::edu, binary},
                                 {scm::ins, binary},
                                 {scm::dia, binary},
                                 {scm::l1, bin_labels},
                                 {scm::stage, stage_levels},
                                 {scm::y1, binary},
                                 {scm::m, binary},
                                 {scm::y2, binary}};
  // A single bin collapses L1 out of the joint.
  const bool collapsed = bin_labels.size() == 1;
  std::vector<std::size_t> strides(vars.size(), 0);
  std::size_t size = 1;
  for (std::size_t k = vars.size(); k-- > 0;) {
    if (collapsed && k == 6) continue;
    strides[k] = size;
    size *= vars[k].cardinality();
  }
  if (collapsed) vars.erase(vars.begin() + 6);
  std::vector<double> cells(size, 0.0);
  const auto comps = detail::components(c);
  for (const auto& comp : comps) {
    const auto& x = comp.x;
    const std::size_t base = x.r * strides[0] + x.age * strides[1] + x.sex * strides[2] +
                             x.edu * strides[3] + x.ins * strides[4] + x.dia * strides[5];
    for (const auto& seg : segments) {
      const double mass = detail::segment_mass(comp, seg.lo, seg.hi);
      if (!(mass > 0.0)) continue;
      ScmUnit at = x;
      at.stage = seg.stage;
      const double pm1 = logistic(c.m_logit(at));
      const std::size_t cell = base + seg.bin * strides[6] + (seg.stage - stage_offset) * strides[7] +
                               (seg.stage > 0) * strides[8];
      for (int m = 0; m <= 1; ++m) {
        const double pm = m ? pm1 : 1.0 - pm1;
        const double y1 = std::clamp(detail::segment_outcome_mass(c, comp, m, seg.lo, seg.hi), 0.0, mass);
        cells[cell + m * strides[9] + strides[10]] += comp.weight * pm * y1;
        cells[cell + m * strides[9]] += comp.weight * pm * (mass - y1);
      }
    }
  }
  double total = 0.0;
  for (double v : cells) total += v;
  if (c.select) {
    if (total < 1e-4) throw InfeasibleCohortError("selection probability is below 1e-4");
    for (auto& v : cells) v /= total;
  } else if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError("discretized mass sums to " + std::to_string(total));
  }
  return FiniteJoint(std::move(vars), std::move(cells));
}

inline FiniteJoint discretize_to_joint(const ScmConfig& c) { return discretize_to_joint(c, default_bins(c)); }

// ---------------------------------------------------------------------------
// Simulation of the intervention inside the SCM

struct TruthEstimate {
  DecompositionEstimate estimate;
  double se_mean_r0 = 0.0, se_mean_r0prime = 0.0, se_mean_cf = 0.0;
  double se_observed = 0.0, se_reduction = 0.0, se_residual = 0.0;
  std::size_t draws = 0;
};

namespace detail {

// Categorical value of a unit's covariate; L1 itself is numeric (-1).
inline int categorical_value(const ScmConfig& c, const ScmUnit& x, const std::string& name) {
  if (name == scm::age) return x.age;
  if (name == scm::sex) return x.sex;
  if (name == scm::edu) return x.edu;
  if (name == scm::ins) return x.ins;
  if (name == scm::dia) return x.dia;
  if (name == scm::stage) return x.stage - (c.select ? 1 : 0);
  if (name == scm::l1) return -1;
  throw ValidationError("variable '" + name + "' is not a covariate of the SCM");
}

inline std::int64_t stratum_key(const ScmConfig& c, const ScmUnit& x, const std::vector<std::string>& names) {
  std::int64_t key = 0;
  for (const auto& n : names) {
    const int v = categorical_value(c, x, n);
    if (v < 0) throw ValidationError("stratum over numeric '" + n + "' is not supported");
    key = key * 4 + v;
  }
  return key;
}

// Probability of Y2 = 1 given the unit's latent, L1 and M = m.
inline double outcome_probability(const ScmConfig& c, const ScmUnit& x, int m) {
  const double mean = c.l2_base(x) + c.l2_l1 * x.l1 + c.l2_m * m + x.u;
  return normal_cdf((mean - c.threshold) / c.sigma_l2);
}

}  // namespace detail

/// Group means and counterfactual mean obtained by simulating units from the
/// SCM: each r0 unit's target is redrawn from the true law among r0' given
/// its allowable covariates, and outcome probabilities are evaluated
/// analytically given the unit's latent and L1. Standardization over A^y
/// uses the simulated cohort frequencies.
inline TruthEstimate true_decomposition(const ScmConfig& c, const AllowabilityPartition& p,
                                        Standardization s, std::size_t draws, std::uint64_t seed,
                                        std::size_t workers = default_workers()) {
  for (const auto& n : p.all()) (void)detail::categorical_value(c, ScmUnit{}, n);
  for (const auto& n : p.outcome_allowable)
    if (n == scm::l1) throw ValidationError("standardization over numeric L1 is not supported");
  const auto units = draw_units(c, draws, seed, detail::kTruthDomain, workers);

  std::vector<std::string> allowable = p.outcome_allowable;
  allowable.insert(allowable.end(), p.target_allowable_extra.begin(), p.target_allowable_extra.end());
  auto has = [&](const std::string& n) { return std::find(allowable.begin(), allowable.end(), n) != allowable.end(); };
  // The r0' law of M depends on these; when all are allowable it is the
  // structural equation itself.
  bool closed_form = true;
  if (c.m.age != 0.0) closed_form = closed_form && has(scm::age);
  if (c.m.sex != 0.0) closed_form = closed_form && has(scm::sex);
  if (c.m.edu != 0.0) closed_form = closed_form && has(scm::edu);
  if (c.m.ins != 0.0) closed_form = closed_form && has(scm::ins);
  if (c.m.dia != 0.0) closed_form = closed_form && has(scm::dia);
  if (c.m_stage != 0.0) closed_form = closed_form && (has(scm::l1) || has(scm::stage));
  auto r1_law = [&](const ScmUnit& x) {
    ScmUnit as_r1 = x;
    as_r1.r = 0;
    return logistic(c.m_logit(as_r1));
  };
  std::map<std::int64_t, std::pair<double, double>> strata;  // key -> (sum P(M=1), count)
  if (!closed_form) {
    for (const auto& x : units)
      if (x.r == 0) {
        auto& cell = strata[detail::stratum_key(c, x, allowable)];
        cell.first += r1_law(x);
        cell.second += 1.0;
      }
  }
  auto intervention = [&](const ScmUnit& x) {
    if (closed_form) return r1_law(x);
    const auto it = strata.find(detail::stratum_key(c, x, allowable));
    if (it == strata.end())
      throw CommonSupportError("simulated r0' units never reach an allowable stratum of r0 units");
    return it->second.first / it->second.second;
  };

  // Per A^y cell: cohort counts by race and per-group sums.
  struct Cell {
    double n[2] = {0, 0};
    double own[2] = {0, 0}, own2[2] = {0, 0};
    double cf = 0, cf2 = 0, diff = 0, diff2 = 0;
  };
  std::map<std::int64_t, Cell> cells;
  for (const auto& x : units) {
    auto& cell = cells[detail::stratum_key(c, x, p.outcome_allowable)];
    const double q1 = detail::outcome_probability(c, x, 1), q0 = detail::outcome_probability(c, x, 0);
    const double pm = logistic(c.m_logit(x));
    const double own = pm * q1 + (1 - pm) * q0;
    cell.n[x.r] += 1;
    cell.own[x.r] += own;
    cell.own2[x.r] += own * own;
    if (x.r == 1) {
      const double pi = intervention(x);
      const double cf = pi * q1 + (1 - pi) * q0;
      cell.cf += cf;
      cell.cf2 += cf * cf;
      cell.diff += own - cf;
      cell.diff2 += (own - cf) * (own - cf);
    }
  }
  double total[2] = {0, 0};
  for (const auto& [k, cell] : cells) {
    total[0] += cell.n[0];
    total[1] += cell.n[1];
  }
  struct Acc {
    double mean = 0, var = 0;
    void add(double weight, double sum, double sum2, double n) {
      if (n <= 0) {
        if (weight > 0) throw CommonSupportError("a standard stratum has no simulated units in a group");
        return;
      }
      const double m = sum / n;
      mean += weight * m;
      var += weight * weight * std::max(0.0, sum2 / n - m * m) / n;
    }
  } r0, r1, cf, red;
  for (const auto& [k, cell] : cells) {
    double weight = 0.0;
    switch (s) {
      case Standardization::Pooled: weight = (cell.n[0] + cell.n[1]) / (total[0] + total[1]); break;
      case Standardization::MarginalizedToR0: weight = cell.n[1] / total[1]; break;
      case Standardization::MarginalizedToR0Prime: weight = cell.n[0] / total[0]; break;
    }
    r0.add(weight, cell.own[1], cell.own2[1], cell.n[1]);
    r1.add(weight, cell.own[0], cell.own2[0], cell.n[0]);
    cf.add(weight, cell.cf, cell.cf2, cell.n[1]);
    red.add(weight, cell.diff, cell.diff2, cell.n[1]);
  }
  TruthEstimate t;
  t.estimate = DecompositionEstimate::from_means(r0.mean, r1.mean, cf.mean, s, Backend::MonteCarloG);
  t.se_mean_r0 = std::sqrt(r0.var);
  t.se_mean_r0prime = std::sqrt(r1.var);
  t.se_mean_cf = std::sqrt(cf.var);
  t.se_observed = std::sqrt(r0.var + r1.var);
  t.se_reduction = std::sqrt(red.var);
  t.se_residual = std::sqrt(cf.var + r1.var);
  t.draws = units.size();
  return t;
}

inline double true_counterfactual(const ScmConfig& c, const AllowabilityPartition& p, Standardization s,
                                  std::size_t draws, std::uint64_t seed) {
  return true_decomposition(c, p, s, draws, seed).estimate.mean_cf;
}

}  // namespace eqdecomp
