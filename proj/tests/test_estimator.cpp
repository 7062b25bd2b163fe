#include <gtest/gtest.h>

#include <random>

#include <eqdecomp/estimator.hpp>

#include "support.hpp"

using namespace eqdecomp;

namespace {

// n rows drawn iid from a joint, all categorical columns.
CohortTable sample_cohort(const FiniteJoint& joint, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::discrete_distribution<std::size_t> cell(joint.cells().begin(), joint.cells().end());
  std::vector<std::vector<std::uint32_t>> codes(joint.dimension());
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = joint.assignment(cell(gen));
    for (std::size_t k = 0; k < a.size(); ++k) codes[k].push_back(static_cast<std::uint32_t>(a[k]));
  }
  CohortTable t;
  for (std::size_t k = 0; k < joint.dimension(); ++k)
    t.add_categorical(joint.variables()[k].name, joint.variables()[k].levels, std::move(codes[k]));
  return t;
}

const AllowabilityPartition kWorked{{"A"}, {}, {}};

}  // namespace

TEST(Estimator, WeightedMeanContrast) {
  const std::vector<double> ya{1, 0, 1}, wa{1, 1, 2}, yb{0, 1}, wb{3, 1};
  EXPECT_DOUBLE_EQ(weighted_mean_contrast(ya, wa, yb, wb), 0.75 - 0.25);
  const std::vector<double> none;
  EXPECT_THROW(weighted_mean_contrast(none, none, yb, wb), ValidationError);
  const std::vector<double> negative{1, -1, 1};
  EXPECT_THROW(weighted_mean_contrast(ya, negative, yb, wb), ValidationError);
}

TEST(Estimator, DefaultRoleSpecs) {
  const auto t = enumerate_joint(testkit::worked_joint());
  const AllowabilityPartition p{{"A"}, {}, {}};
  const auto race = role_spec("race_ay", testkit::worked_roles(), p, t, {});
  EXPECT_EQ(race.response, "R");
  EXPECT_EQ(race.predictors, std::vector<std::string>{"A"});
  EXPECT_EQ(race.family, Family::Saturated);
  const auto target = role_spec("target_r0prime", testkit::worked_roles(), p, t, {});
  ASSERT_TRUE(target.fit_group.has_value());
  EXPECT_EQ(target.fit_group->level, "w");
  ModelConfig cfg;
  cfg.default_family = Family::BinaryLogit;
  cfg.roles["target_r0"].predictors = std::vector<std::string>{};
  const auto custom = role_spec("target_r0", testkit::worked_roles(), p, t, cfg);
  EXPECT_TRUE(custom.predictors.empty());
  EXPECT_EQ(custom.family, Family::BinaryLogit);
  EXPECT_THROW(role_spec("nope", testkit::worked_roles(), p, t, {}), ValidationError);
}

TEST(Estimator, WorkedJointReproducesExactValues) {
  const auto t = enumerate_joint(testkit::worked_joint());
  const auto truth = testkit::worked_truth();
  for (auto backend : {Backend::RMPW, Backend::IORW}) {
    WeightedOptions opt;
    opt.backend = backend;
    const auto run = estimate_weighted(t, testkit::worked_roles(), kWorked, opt);
    EXPECT_NEAR(run.estimate.mean_r0, truth.mean_r0, 1e-12);
    EXPECT_NEAR(run.estimate.mean_r0prime, truth.mean_r0prime, 1e-12);
    EXPECT_NEAR(run.estimate.mean_cf, truth.mean_cf, 1e-12);
    EXPECT_NEAR(run.estimate.reduction, -0.08, 1e-12);
    EXPECT_NEAR(run.estimate.residual, 0.10, 1e-12);
    EXPECT_LT(run.direct_check, 1e-12);
    EXPECT_NEAR(run.estimate.additivity_gap(), 0.0, 1e-12);
  }
}

class EstimatorRandom : public ::testing::TestWithParam<int> {};

TEST_P(EstimatorRandom, SaturatedFitsOnEnumeratedJointMatchExact) {
  std::mt19937_64 gen(4400 + GetParam());
  const auto c = testkit::random_case(gen, 1, 3);
  const auto t = enumerate_joint(c.joint);
  for (auto s : kAllStandardizations)
    for (auto backend : {Backend::RMPW, Backend::IORW}) {
      WeightedOptions opt;
      opt.backend = backend;
      opt.standardization = s;
      const auto run = estimate_weighted(t, c.roles, c.partition, opt);
      const auto exact = decompose_exact(c.joint, c.roles, c.partition, s);
      EXPECT_NEAR(run.estimate.observed, exact.observed, 1e-10);
      EXPECT_NEAR(run.estimate.reduction, exact.reduction, 1e-10);
      EXPECT_NEAR(run.estimate.residual, exact.residual, 1e-10);
      EXPECT_LT(run.direct_check, 1e-10);
    }
}

INSTANTIATE_TEST_SUITE_P(Sweep, EstimatorRandom, ::testing::Range(0, 40));

TEST(Estimator, RaceMustBeBinaryInCohort) {
  std::vector<VariableSpec> vars{{"R", {"w", "b", "o"}}, {"A", testkit::kBinary},
                                 {"M", testkit::kBinary}, {"Y", testkit::kBinary}};
  const auto j = FiniteJoint::from_weights(vars, [](const Assignment&) { return 1.0; });
  WeightedOptions opt;
  EXPECT_THROW(estimate_weighted(enumerate_joint(j), testkit::worked_roles(), kWorked, opt),
               ValidationError);
}

TEST(Estimator, SelectionRestrictsCohort) {
  std::vector<VariableSpec> vars{{"S", {"out", "in"}}, {"R", {"w", "b"}}, {"A", testkit::kBinary},
                                 {"M", testkit::kBinary}, {"Y", testkit::kBinary}};
  const auto base = testkit::worked_joint();
  const auto j = FiniteJoint::from_weights(vars, [&](const Assignment& x) {
    const Assignment inner{x[1], x[2], x[3], x[4]};
    return base.probability(inner) * (x[0] ? 0.5 : 0.5 * (x[4] ? 3.0 : 0.1));
  });
  auto roles = testkit::worked_roles();
  roles.selection = SelectionBinding{"S", "in"};
  const auto run = estimate_weighted(enumerate_joint(j), roles, kWorked, {});
  EXPECT_NEAR(run.estimate.mean_cf, testkit::worked_truth().mean_cf, 1e-12);
  EXPECT_EQ(run.dropped_by_selection, 16u);
}

TEST(Estimator, LogisticFitsRecoverTruthOnLargeSample) {
  const auto t = sample_cohort(testkit::worked_joint(), 40000, 5);
  WeightedOptions opt;
  opt.models.default_family = Family::BinaryLogit;
  const auto run = estimate_weighted(t, testkit::worked_roles(), kWorked, opt);
  EXPECT_NEAR(run.estimate.mean_cf, 0.49, 0.02);
  EXPECT_NEAR(run.estimate.reduction, -0.08, 0.02);
  EXPECT_LT(run.direct_check, 1e-10);
}

TEST(Estimator, BootstrapIsDeterministicAcrossWorkerCounts) {
  const auto t = sample_cohort(testkit::worked_joint(), 600, 11);
  WeightedOptions opt;
  BootstrapConfig boot;
  boot.replicates = 60;
  boot.seed = 42;
  boot.workers = 1;
  const auto one = decompose_weighted(t, testkit::worked_roles(), kWorked, opt, boot);
  boot.workers = 4;
  const auto four = decompose_weighted(t, testkit::worked_roles(), kWorked, opt, boot);
  ASSERT_TRUE(one.estimate.ci && four.estimate.ci);
  EXPECT_EQ(one.estimate.ci->reduction.lower, four.estimate.ci->reduction.lower);
  EXPECT_EQ(one.estimate.ci->reduction.upper, four.estimate.ci->reduction.upper);
  EXPECT_EQ(one.estimate.ci->observed.upper, four.estimate.ci->observed.upper);
  EXPECT_LE(one.estimate.ci->reduction.lower, one.estimate.ci->reduction.upper);
  boot.seed = 43;
  const auto other = decompose_weighted(t, testkit::worked_roles(), kWorked, opt, boot);
  EXPECT_NE(one.estimate.ci->reduction.lower, other.estimate.ci->reduction.lower);
}

TEST(Estimator, BootstrapPreservesStratumSizes) {
  const std::vector<std::uint32_t> strata{0, 0, 1, 1, 1, 0, 1};
  const auto counts = bootstrap_multiplicities(strata, 2, 9, 3);
  double s0 = 0, s1 = 0;
  for (std::size_t i = 0; i < strata.size(); ++i) (strata[i] ? s1 : s0) += counts[i];
  EXPECT_EQ(s0, 3.0);
  EXPECT_EQ(s1, 4.0);
  EXPECT_EQ(counts, bootstrap_multiplicities(strata, 2, 9, 3));
}

TEST(Estimator, BootstrapFailsWhenTooManyReplicatesFail) {
  const auto t = sample_cohort(testkit::worked_joint(), 50, 3);
  BootstrapConfig boot;
  boot.replicates = 100;
  std::atomic<int> calls{0};
  auto flaky = [&](const CohortTable&) -> DecompositionEstimate {
    if (calls++ % 10 == 0) throw DegenerateResponseError("degenerate");
    return DecompositionEstimate::from_means(0.5, 0.4, 0.45, Standardization::Pooled, Backend::RMPW);
  };
  EXPECT_THROW(bootstrap_ci(flaky, t, boot, std::string("R")), BootstrapError);
  auto fine = [](const CohortTable&) {
    return DecompositionEstimate::from_means(0.5, 0.4, 0.45, Standardization::Pooled, Backend::RMPW);
  };
  const auto r = bootstrap_ci(fine, t, boot, std::string("R"));
  EXPECT_EQ(r.failures, 0u);
  EXPECT_DOUBLE_EQ(r.intervals.reduction.lower, 0.05);
  BootstrapConfig bad = boot;
  bad.level = 1.0;
  EXPECT_THROW(bootstrap_ci(fine, t, bad), ValidationError);
}

TEST(Estimator, EmpiricalPositivityFlagsMissingStratum) {
  // No r0 row has A=1 and M=1.
  std::vector<VariableSpec> vars{{"R", {"w", "b"}}, {"A", testkit::kBinary}, {"M", testkit::kBinary},
                                 {"Y", testkit::kBinary}};
  const auto j = FiniteJoint::from_weights(vars, [](const Assignment& x) {
    return x[0] == 1 && x[1] == 1 && x[2] == 1 ? 0.0 : 1.0;
  });
  const auto t = enumerate_joint(j);
  const auto report = check_positivity(t, testkit::worked_roles(), kWorked);
  EXPECT_FALSE(report.ok());
  WeightedOptions strict;
  strict.strict_positivity = true;
  EXPECT_THROW(estimate_weighted(t, testkit::worked_roles(), kWorked, strict), PositivityError);
  const auto lenient = estimate_weighted(t, testkit::worked_roles(), kWorked, {});
  EXPECT_FALSE(lenient.positivity.ok());
  EXPECT_FALSE(lenient.warnings.empty());
  const auto fine = check_positivity(enumerate_joint(testkit::worked_joint()), testkit::worked_roles(),
                                     kWorked);
  EXPECT_TRUE(fine.ok());
}
