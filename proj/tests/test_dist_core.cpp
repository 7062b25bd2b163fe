#include <gtest/gtest.h>

#include <random>

#include <eqdecomp/dist_core.hpp>

#include "support.hpp"

using namespace eqdecomp;

namespace {

FiniteJoint uniform_ry() {
  return FiniteJoint({{"R", {"0", "1"}}, {"Y", {"0", "1"}}}, {0.25, 0.25, 0.25, 0.25});
}

}  // namespace

TEST(DistCore, ConstructionRejectsBadTables) {
  EXPECT_THROW(FiniteJoint({{"R", {"0"}}}, {1.0}), SchemaError);
  EXPECT_THROW(FiniteJoint({{"R", {"0", "0"}}}, {0.5, 0.5}), SchemaError);
  EXPECT_THROW(FiniteJoint({{"R", {"0", "1"}}}, {0.6, 0.6}), SchemaError);
  EXPECT_THROW(FiniteJoint({{"R", {"0", "1"}}}, {1.1, -0.1}), SchemaError);
  EXPECT_THROW(FiniteJoint({{"R", {"0", "1"}}}, {1.0}), SchemaError);
  EXPECT_THROW(FiniteJoint({{"R", {"0", "1"}}, {"R", {"0", "1"}}}, {0.25, 0.25, 0.25, 0.25}),
               SchemaError);
}

TEST(DistCore, MarginalizeUniform) {
  const auto m = marginalize(uniform_ry(), {"Y"});
  ASSERT_EQ(m.dimension(), 1u);
  EXPECT_DOUBLE_EQ(m.cells()[1], 0.5);
  EXPECT_THROW(marginalize(uniform_ry(), {"Q"}), SchemaError);
}

TEST(DistCore, MarginalizeAllIsIdentity) {
  const auto j = testkit::worked_joint();
  const auto m = marginalize(j, {"R", "A", "M", "Y"});
  ASSERT_EQ(m.size(), j.size());
  for (std::size_t c = 0; c < j.size(); ++c) EXPECT_EQ(m.cells()[c], j.cells()[c]);
}

TEST(DistCore, WorkedJointMarginalOfA) {
  const auto j = testkit::worked_joint();
  double oracle = 0;
  j.for_each_cell([&](const Assignment& a, double p) {
    if (a[1] == 1) oracle += p;
  });
  const auto m = marginalize(j, {"A"});
  EXPECT_NEAR(m.cells()[1], oracle, 1e-12);
  EXPECT_NEAR(m.cells()[1], 0.5, 1e-12);
}

TEST(DistCore, ConditionUniformAndZeroEvidence) {
  const auto c = condition(uniform_ry(), {{"R", "1"}});
  EXPECT_DOUBLE_EQ(c.cells()[1], 0.5);
  const FiniteJoint degenerate({{"R", {"0", "1"}}, {"Y", {"0", "1"}}}, {0.5, 0.5, 0.0, 0.0});
  EXPECT_THROW(condition(degenerate, {{"R", "1"}}), UndefinedConditionalError);
}

TEST(DistCore, ConditionWorkedJoint) {
  const auto j = testkit::worked_joint();
  const auto c = marginalize(condition(j, {{"R", "b"}, {"A", "1"}}), {"M"});
  EXPECT_NEAR(c.cells()[1], testkit::worked_p_m(true, 1), 1e-12);
  EXPECT_NEAR(c.cells()[1], 0.4, 1e-12);
}

TEST(DistCore, ExpectationBasics) {
  const auto j = testkit::worked_joint();
  EXPECT_NEAR(expectation(j, [](const Assignment&) { return 3.5; }), 3.5, 1e-12);
  const double py = marginalize(j, {"Y"}).cells()[1];
  EXPECT_NEAR(expectation(j, [](const Assignment& a) { return a[3] == 1 ? 1.0 : 0.0; }), py, 1e-15);
  const double pr0 = marginalize(j, {"R"}).cells()[1];
  const double mean_r0 = expectation(j, [&](const Assignment& a) {
    return a[0] == 1 ? static_cast<double>(a[3]) / pr0 : 0.0;
  });
  EXPECT_NEAR(mean_r0, testkit::worked_truth().mean_r0, 1e-12);
  EXPECT_NEAR(mean_r0, 0.41, 1e-12);
}

TEST(DistCore, ConservationAndConsistencyOnRandomJoints) {
  std::mt19937_64 gen(11);
  for (int rep = 0; rep < 50; ++rep) {
    const auto c = testkit::random_case(gen);
    const auto& j = c.joint;
    const auto xy = marginalize(j, {"X0", "M"});
    EXPECT_NEAR(xy.mass(), 1.0, 1e-12);
    const auto py = marginalize(j, {"M"});
    // sum_y P(x|y) P(y) = P(x)
    const auto px = marginalize(j, {"X0"});
    for (std::size_t x = 0; x < 2; ++x) {
      double total = 0;
      for (std::size_t y = 0; y < 2; ++y) {
        const auto cond = marginalize(condition(j, {{"M", std::to_string(y)}}), {"X0"});
        EXPECT_NEAR(cond.mass(), 1.0, 1e-12);
        for (double p : cond.cells()) EXPECT_GE(p, 0.0);
        total += cond.cells()[x] * py.cells()[y];
      }
      EXPECT_NEAR(total, px.cells()[x], 1e-12);
    }
  }
}

TEST(DistCore, ProjectReordersVariables) {
  const auto j = testkit::worked_joint();
  const std::vector<std::string> order{"Y", "R"};
  const auto p = project(j, order);
  EXPECT_EQ(p.variables()[0].name, "Y");
  double oracle = 0;
  j.for_each_cell([&](const Assignment& a, double q) {
    if (a[3] == 1 && a[0] == 0) oracle += q;
  });
  EXPECT_NEAR(p.probability({1, 0}), oracle, 1e-15);
}

TEST(DistCore, TextRoundTrip) {
  const auto j = testkit::worked_joint();
  const auto back = joint_from_text(to_text(j));
  ASSERT_EQ(back.size(), j.size());
  for (std::size_t c = 0; c < j.size(); ++c) EXPECT_EQ(back.cells()[c], j.cells()[c]);
  EXPECT_EQ(back.variables()[0].levels, j.variables()[0].levels);
  EXPECT_THROW(joint_from_text("#var\tA\t0\t1\n1\t0.5\n0\t0.5\n"), SchemaError);
}
