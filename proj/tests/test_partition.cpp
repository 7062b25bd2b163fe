#include <gtest/gtest.h>

#include <eqdecomp/partition.hpp>

using namespace eqdecomp;

namespace {

RoleBindings roles() {
  RoleBindings r;
  r.race = {"race", "black", "white"};
  r.target = "M";
  r.outcome = "Y2";
  r.selection = SelectionBinding{"Y1", "1"};
  return r;
}

const std::vector<std::string> kSchema{"race", "age", "sex", "edu", "ins", "dia", "L1",
                                       "Y1",   "M",   "Y2"};

bool has_kind(const ValidationReport& r, Violation::Kind k, const std::string& var) {
  for (const auto& v : r.violations)
    if (v.kind == k && v.variable == var) return true;
  return false;
}

}  // namespace

TEST(Partition, DisjointIsValid) {
  const AllowabilityPartition p{{"age"}, {"dia"}, {"edu"}};
  const auto r = validate(p, roles(), kSchema);
  EXPECT_TRUE(r.ok()) << r.summary();
  EXPECT_EQ(r.ignored, (std::vector<std::string>{"sex", "ins", "L1"}));
}

TEST(Partition, OverlapNamed) {
  const AllowabilityPartition p{{"age"}, {"age"}, {}};
  const auto r = validate(p, roles(), kSchema);
  EXPECT_TRUE(has_kind(r, Violation::Kind::Overlap, "age"));
  EXPECT_NE(r.summary().find("age"), std::string::npos);
  EXPECT_THROW(r.throw_if_invalid(), ValidationError);
}

TEST(Partition, RoleCollisionAndUnknown) {
  const AllowabilityPartition p{{"zip"}, {}, {"M"}};
  const auto r = validate(p, roles(), kSchema);
  EXPECT_TRUE(has_kind(r, Violation::Kind::RoleCollision, "M"));
  EXPECT_TRUE(has_kind(r, Violation::Kind::UnknownVariable, "zip"));
  auto dup = roles();
  dup.outcome = "M";
  EXPECT_TRUE(has_kind(validate({}, dup, kSchema), Violation::Kind::DuplicateRole, "M"));
}

TEST(Partition, TablePresets) {
  const auto schema = motivating_schema();
  const auto p3 = preset(3, schema);
  EXPECT_EQ(p3.outcome_allowable,
            (std::vector<std::string>{"age", "sex", "edu", "ins", "dia", "L1"}));
  EXPECT_TRUE(p3.target_allowable_extra.empty());
  EXPECT_TRUE(p3.non_allowable.empty());

  const auto p6 = preset(Preset::Meaningful, schema);
  EXPECT_EQ(p6.outcome_allowable, (std::vector<std::string>{"age", "sex"}));
  EXPECT_EQ(p6.target_allowable_extra, (std::vector<std::string>{"dia", "L1"}));
  EXPECT_EQ(p6.non_allowable, (std::vector<std::string>{"edu", "ins"}));

  const auto p1 = preset(1, schema);
  EXPECT_TRUE(p1.outcome_allowable.empty());
  EXPECT_TRUE(p1.target_allowable_extra.empty());
  EXPECT_EQ(p1.non_allowable.size(), 6u);

  EXPECT_EQ(preset(2, schema).target_allowable_extra.size(), 6u);
  const auto p4 = preset(4, schema);
  EXPECT_EQ(p4.non_allowable, (std::vector<std::string>{"edu", "ins", "dia", "L1"}));
  const auto p5 = preset(5, schema);
  EXPECT_EQ(p5.target_allowable_extra, (std::vector<std::string>{"edu", "ins", "dia", "L1"}));

  EXPECT_THROW(preset(7, schema), ValidationError);
  EXPECT_THROW(parse_preset("bogus"), ValidationError);
  EXPECT_EQ(parse_preset("meaningful"), Preset::Meaningful);
}

TEST(Partition, PresetsAlwaysValidate) {
  const auto schema = motivating_schema();
  for (int id = 1; id <= 6; ++id) {
    const auto r = validate(preset(id, schema), roles(), kSchema);
    EXPECT_TRUE(r.ok()) << id << ": " << r.summary();
    EXPECT_TRUE(r.ignored.empty());
  }
}

TEST(Partition, StandardizationNames) {
  for (auto s : kAllStandardizations) EXPECT_EQ(parse_standardization(to_string(s)), s);
  EXPECT_THROW(parse_standardization("median"), ValidationError);
}
