#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>

#include <eqdecomp/dgp.hpp>
#include <eqdecomp/estimator.hpp>
#include <eqdecomp/montecarlo.hpp>

using namespace eqdecomp;

namespace {

AllowabilityPartition meaningful() { return preset(Preset::Meaningful, scm_schema()); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double mass_where(const FiniteJoint& j, const std::string& var, const std::string& level) {
  const auto k = j.index_of(var);
  const auto l = j.level_index(k, level);
  double s = 0.0;
  j.for_each_cell([&](const Assignment& a, double p) {
    if (a[k] == l) s += p;
  });
  return s;
}

}  // namespace

TEST(Dgp, SameSeedSameTable) {
  auto c = ScmConfig::reference();
  c.seed = 17;
  const auto a = generate(c, 3000, 1);
  const auto b = generate(c, 3000, 3);
  ASSERT_EQ(a.rows(), 3000u);
  for (std::size_t k = 0; k < a.width(); ++k) {
    EXPECT_EQ(a.columns()[k].codes, b.columns()[k].codes) << a.columns()[k].name;
    EXPECT_EQ(a.columns()[k].values, b.columns()[k].values) << a.columns()[k].name;
  }
  c.seed = 18;
  EXPECT_NE(generate(c, 3000, 1).column(scm::l1).values, a.column(scm::l1).values);
}

TEST(Dgp, ReplacingTargetEquationLeavesUpstreamColumns) {
  auto c = ScmConfig::reference();
  c.seed = 5;
  auto d = c;
  d.m = {2.0, 1.0, -1.0};
  d.m_stage = -2.0;
  const auto a = generate(c, 2000, 1);
  const auto b = generate(d, 2000, 1);
  for (const auto& name : {scm::race, scm::age, scm::sex, scm::edu, scm::ins, scm::dia, scm::stage}) {
    EXPECT_EQ(a.column(name).codes, b.column(name).codes) << name;
  }
  EXPECT_EQ(a.column(scm::l1).values, b.column(scm::l1).values);
  EXPECT_NE(a.column(scm::m).codes, b.column(scm::m).codes);
}

TEST(Dgp, SelectionKeepsOnlyHypertensiveRows) {
  const auto t = generate(ScmConfig::reference(), 5000, 1);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    ASSERT_GE(t.column(scm::l1).values[i], 140.0);
    ASSERT_EQ(t.column(scm::y1).codes[i], 1u);
  }
  EXPECT_EQ(t.column(scm::stage).levels, (std::vector<std::string>{"140-159", "160+"}));
}

TEST(Dgp, InfeasibleSelection) {
  auto c = ScmConfig::reference();
  c.threshold = 400.0;
  c.stage_cut = 420.0;
  EXPECT_THROW(generate(c, 10, 1), InfeasibleCohortError);
  EXPECT_THROW(generate(ScmConfig::reference(), 0, 1), ValidationError);
}

TEST(Dgp, SingleBinMarginalsMatchAnalyticValues) {
  auto c = ScmConfig::reference();
  c.select = false;
  EXPECT_THROW(discretize_to_joint(c, {150.0, 145.0}), ValidationError);
  const auto j = discretize_to_joint(c, {});
  double total = 0.0;
  for (double p : j.cells()) total += p;
  EXPECT_NEAR(total, 1.0, 1e-9);
  EXPECT_NEAR(mass_where(j, scm::race, "black"), 0.35, 1e-9);
  const double age1 = 0.35 * sigmoid(0.2 - 0.6) + 0.65 * sigmoid(0.2);
  EXPECT_NEAR(mass_where(j, scm::age, "1"), age1, 1e-9);
  EXPECT_NEAR(mass_where(j, scm::sex, "1"), sigmoid(0.1), 1e-9);
  // P(edu=1) by direct enumeration over race and age.
  double edu1 = 0.0;
  for (int r = 0; r <= 1; ++r)
    for (int a = 0; a <= 1; ++a) {
      const double pr = r ? 0.35 : 0.65;
      const double pa = a ? sigmoid(0.2 - 0.6 * r) : 1 - sigmoid(0.2 - 0.6 * r);
      edu1 += pr * pa * sigmoid(-0.8 + 0.9 * r + 0.2 * a);
    }
  EXPECT_NEAR(mass_where(j, scm::edu, "1"), edu1, 1e-9);
}

TEST(Dgp, ThresholdBinMassEqualsSelectionProbability) {
  auto c = ScmConfig::reference();
  c.select = false;
  const auto j = discretize_to_joint(c, {140.0});
  // P(L1 >= 140) as a mixture of normals, enumerated independently.
  const boost::math::normal_distribution<> z;
  const double sd = std::sqrt(100.0 + 100.0);
  double expected = 0.0;
  for (int code = 0; code < 64; ++code) {
    const int r = code & 1, age = (code >> 1) & 1, sex = (code >> 2) & 1, edu = (code >> 3) & 1,
              ins = (code >> 4) & 1, dia = (code >> 5) & 1;
    auto bern = [](double eta, int v) { return v ? sigmoid(eta) : 1 - sigmoid(eta); };
    const double w = (r ? 0.35 : 0.65) * bern(0.2 - 0.6 * r, age) * bern(0.1, sex) *
                     bern(-0.8 + 0.9 * r + 0.2 * age, edu) * bern(-1.2 + 0.7 * r - 0.3 * age + edu, ins) *
                     bern(-1.5 + 0.5 * r + 0.6 * age + 0.4 * edu + 0.3 * ins, dia);
    const double mu = 132 + 6 * r + 5 * age - sex + 3 * edu + 2 * ins + 5 * dia;
    expected += w * boost::math::cdf(boost::math::complement(z, (140.0 - mu) / sd));
  }
  EXPECT_NEAR(mass_where(j, scm::l1, "140+"), expected, 1e-9);
  EXPECT_NEAR(mass_where(j, scm::y1, "1"), expected, 1e-9);
  EXPECT_NEAR(selection_probability(ScmConfig::reference()), expected, 1e-9);
}

TEST(Dgp, SelectedJointRejectsEdgesBelowThreshold) {
  EXPECT_THROW(discretize_to_joint(ScmConfig::reference(), {130.0, 150.0}), ValidationError);
  const auto j = discretize_to_joint(ScmConfig::reference(), {140.0, 160.0});
  EXPECT_NEAR(mass_where(j, scm::y1, "1"), 1.0, 1e-12);
}

TEST(Dgp, DefaultBinsAreEqualProbabilityAndIncludeStageCut) {
  const auto c = ScmConfig::reference();
  const auto edges = default_bins(c);
  EXPECT_NE(std::find(edges.begin(), edges.end(), 160.0), edges.end());
  EXPECT_EQ(edges.size(), 8u);
  const auto j = discretize_to_joint(c, edges);
  const auto& labels = j.variables()[j.index_of(scm::l1)].levels;
  int equal = 0;
  for (const auto& l : labels)
    if (std::abs(mass_where(j, scm::l1, l) - 0.125) < 1e-6) ++equal;
  // The stage cut splits one of the eight quantile bins in two.
  EXPECT_EQ(equal, 7);
}

TEST(Dgp, StagedAndBinnedL1GiveTheSameDecomposition) {
  const auto c = ScmConfig::reference();
  const auto j = discretize_to_joint(c);
  const auto roles = scm_roles(c);
  const AllowabilityPartition binned{{scm::age, scm::sex}, {scm::dia, scm::l1}, {scm::edu, scm::ins}};
  for (auto s : kAllStandardizations) {
    const auto a = decompose_exact(j, roles, meaningful(), s);
    const auto b = decompose_exact(j, roles, binned, s);
    EXPECT_NEAR(a.reduction, b.reduction, 1e-10);
    EXPECT_NEAR(a.residual, b.residual, 1e-10);
  }
}

class DualOracle : public ::testing::TestWithParam<int> {};

TEST_P(DualOracle, SimulationMatchesExactJoint) {
  const auto c = GetParam() == 0 ? ScmConfig::reference() : ScmConfig::latent_covariates();
  const auto j = discretize_to_joint(c);
  const auto roles = scm_roles(c);
  const std::vector<AllowabilityPartition> partitions{
      meaningful(), preset(Preset::PseOneTwo, scm_schema()), preset(Preset::NieAnalogue, scm_schema())};
  for (const auto& p : partitions)
    for (auto s : kAllStandardizations) {
      const auto exact = decompose_exact(j, roles, p, s);
      const auto sim = true_decomposition(c, p, s, 400'000, 99);
      // Quadrature error is far below the simulation error.
      EXPECT_NEAR(sim.estimate.observed, exact.observed, 4 * sim.se_observed + 1e-6);
      EXPECT_NEAR(sim.estimate.reduction, exact.reduction, 4 * sim.se_reduction + 1e-6);
      EXPECT_NEAR(sim.estimate.residual, exact.residual, 4 * sim.se_residual + 1e-6);
    }
}

INSTANTIATE_TEST_SUITE_P(Configs, DualOracle, ::testing::Values(0, 1));

TEST(Dgp, NoRaceEffectsNoDisparity) {
  const auto c = ScmConfig::reference().without_race();
  const auto j = discretize_to_joint(c);
  const auto e = decompose_exact(j, scm_roles(c), {}, Standardization::Pooled);
  EXPECT_NEAR(e.observed, 0.0, 1e-9);
  auto g = c;
  g.seed = 4;
  const auto t = generate(g, 200'000, 1);
  WeightedOptions opt;
  const auto run = estimate_weighted(t, scm_roles(c), {}, opt);
  EXPECT_LT(std::abs(run.estimate.observed), 0.01);
}

TEST(Dgp, NullTargetEffectGivesZeroReduction) {
  auto c = ScmConfig::reference();
  c.l2_m = 0.0;
  const auto exact = decompose_exact(discretize_to_joint(c), scm_roles(c), meaningful());
  EXPECT_NEAR(exact.reduction, 0.0, 1e-10);
  const auto sim = true_decomposition(c, meaningful(), Standardization::Pooled, 50'000, 1);
  EXPECT_NEAR(sim.estimate.reduction, 0.0, 1e-12);
}

TEST(Dgp, RaceInvariantTargetLawGivesZeroReduction) {
  auto c = ScmConfig::reference();
  c.m.race = 0.0;
  c.m_race_edu = 0.0;
  c.m_race_ins = 0.0;
  const auto exact = decompose_exact(discretize_to_joint(c), scm_roles(c), meaningful());
  EXPECT_NEAR(exact.reduction, 0.0, 1e-10);
  const auto sim = true_decomposition(c, meaningful(), Standardization::Pooled, 50'000, 1);
  EXPECT_NEAR(sim.estimate.reduction, 0.0, 1e-12);
}

TEST(Dgp, TruthRejectsUnknownCovariate) {
  AllowabilityPartition p{{"zip"}, {}, {}};
  EXPECT_THROW(true_decomposition(ScmConfig::reference(), p, Standardization::Pooled, 10, 1),
               ValidationError);
}

TEST(Dgp, MonteCarloOnMillionRowsMatchesExactJoint) {
  auto c = ScmConfig::reference();
  c.seed = 2024;
  const auto data = generate(c, 1'000'000);
  const auto roles = scm_roles(c);
  const auto exact = decompose_exact(discretize_to_joint(c), roles, meaningful());
  MonteCarloOptions mc;
  mc.draws = 2'000'000;
  mc.seed = 7;
  const auto e = decompose_montecarlo(data, roles, meaningful(), {}, mc);
  // Standard-error bound for standardized means of a binary outcome:
  // variance <= 0.25 / ESS of the standardization weights; the reduction
  // compares two means over the same rows, so its sd is at most the sum.
  WeightedOptions w;
  const auto run = estimate_weighted(data, roles, meaningful(), w);
  const double se0 = 0.5 / std::sqrt(run.weights[0].diagnostics.ess);
  const double se1 = 0.5 / std::sqrt(run.weights[1].diagnostics.ess);
  const double secf = 0.5 / std::sqrt(run.weights[2].diagnostics.ess);
  const double draw_se = 0.5 / std::sqrt(static_cast<double>(mc.draws));
  EXPECT_NEAR(e.observed, exact.observed, 3 * (std::hypot(se0, se1) + 2 * draw_se));
  EXPECT_NEAR(e.reduction, exact.reduction, 3 * (se0 + secf + 2 * draw_se));
  EXPECT_NEAR(e.residual, exact.residual, 3 * (std::hypot(secf, se1) + 2 * draw_se));
}
