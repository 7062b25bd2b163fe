#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "eqdecomp/cli.hpp"

using namespace eqdecomp;
namespace fs = std::filesystem;

namespace {

const std::string kConfigDir = EQ_CONFIG_DIR;
const std::string kTool = EQ_TOOL;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("eqdecomp_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int code;
  std::string out, err;
};

Run tool(const fs::path& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.string() + "' && '" + kTool + "' " + args + " >'" + out.string() +
                          "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

// Reference cohort (seed 1, n 5000) written where the reference config
// expects it.
RunConfig reference_run(const fs::path& dir) {
  auto c = load_config(kConfigDir + "/reference.yaml");
  c.input = (dir / "reference_cohort.csv").string();
  c.output = (dir / "report").string();
  if (!fs::exists(c.input)) write_csv(c.input, run_simulate(c, 2));
  return c;
}

void write_small(const fs::path& dir) {
  std::ofstream cfg(dir / "small.yaml");
  cfg << "input: d.csv\noutput: out\n"
         "roles: {race: R, r0: b, r0prime: w, target: M, outcome: Y}\n"
         "partition: {outcome_allowable: [A], target_allowable: [], non_allowable: []}\n"
         "levels: {R: [w, b], A: ['0', '1'], M: ['0', '1'], Y: ['0', '1']}\n"
         "models: {default_family: binary-logit}\n";
  // Positivity: b never takes M=1 when A=1. Degenerate: M constant among b.
  std::ofstream pos(dir / "pos.csv"), deg(dir / "deg.csv"), ok(dir / "ok.csv");
  pos << "R,A,M,Y\n";
  deg << "R,A,M,Y\n";
  ok << "R,A,M,Y\n";
  for (int i = 0; i < 160; ++i) {
    const bool b = i % 2;
    const int a = (i / 2) % 2, m = (i / 4) % 2, y = (i / 3) % 2;
    const char* r = b ? "b" : "w";
    pos << r << ',' << a << ',' << (b && a ? 0 : m) << ',' << y << '\n';
    deg << r << ',' << a << ',' << (b ? 0 : m) << ',' << y << '\n';
    ok << r << ',' << a << ',' << m << ',' << (i / 5) % 2 << '\n';
  }
}

std::string without_timestamp(std::string json) {
  auto j = nlohmann::json::parse(json);
  EXPECT_TRUE(j.contains("generated_at"));
  j.erase("generated_at");
  return j.dump();
}

}  // namespace

TEST(CliConfig, OverlappingSetsExitTwoNamingTheVariable) {
  const auto dir = scratch("overlap");
  write_small(dir);
  const auto r = tool(dir, "decompose -c small.yaml --input ok.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  std::string text = slurp(dir / "small.yaml");
  text.replace(text.find("target_allowable: []"), 20, "target_allowable: [A]");
  std::ofstream(dir / "overlap.yaml") << text;
  const auto bad = tool(dir, "decompose -c overlap.yaml --input ok.csv");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("'A'"), std::string::npos) << bad.err;
}

TEST(CliConfig, ValidationFailuresExitTwo) {
  const auto dir = scratch("validation");
  write_small(dir);
  std::ofstream(dir / "typo.yaml") << slurp(dir / "small.yaml") << "bootstrapp: {replicates: 5}\n";
  auto r = tool(dir, "decompose -c typo.yaml --input ok.csv");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bootstrapp"), std::string::npos);

  std::ofstream(dir / "both.yaml") << slurp(dir / "small.yaml") << "preset: 6\nschema: {A: demographic}\n";
  EXPECT_EQ(tool(dir, "decompose -c both.yaml --input ok.csv").code, 2);

  r = tool(dir, "decompose -c small.yaml --input missing.csv");
  EXPECT_EQ(r.code, 2);
  std::ofstream(dir / "nocol.csv") << "R,A,M\nb,0,1\n";
  r = tool(dir, "decompose -c small.yaml --input nocol.csv");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("'Y'"), std::string::npos) << r.err;
  std::ofstream(dir / "badcell.csv") << "R,A,M,Y\nb,0,1,0\nw,2,1,0\n";
  r = tool(dir, "decompose -c small.yaml --input badcell.csv");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("row 3, column 'A'"), std::string::npos) << r.err;
  std::ofstream(dir / "empty.csv") << "R,A,M,Y\n";
  r = tool(dir, "decompose -c small.yaml --input empty.csv");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("empty cohort"), std::string::npos);
  std::ofstream(dir / "broken.yaml") << "roles: [unclosed\n";
  EXPECT_EQ(tool(dir, "decompose -c broken.yaml").code, 2);
  EXPECT_EQ(tool(dir, "simulate -n 10").code, 2);  // --seed is mandatory
  EXPECT_EQ(tool(dir, "decompose -c small.yaml --backend nope").code, 2);
}

TEST(CliExitCodes, PositivityExitsThree) {
  const auto dir = scratch("positivity");
  write_small(dir);
  auto r = tool(dir, "decompose -c small.yaml --input pos.csv");
  EXPECT_EQ(r.code, 0) << r.err;  // warn mode: reported, not fatal
  const auto report = nlohmann::json::parse(slurp(dir / "out.json"));
  EXPECT_FALSE(report["positivity"]["ok"].get<bool>());
  r = tool(dir, "decompose -c small.yaml --input pos.csv --positivity strict");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("{A=1}"), std::string::npos) << r.err;
  EXPECT_EQ(tool(dir, "check -c small.yaml --input pos.csv").code, 3);
  EXPECT_EQ(tool(dir, "check -c small.yaml --input ok.csv").code, 0);
}

TEST(CliExitCodes, DegenerateModelExitsFour) {
  const auto dir = scratch("degenerate");
  write_small(dir);
  const auto r = tool(dir, "decompose -c small.yaml --input deg.csv");
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("'M'"), std::string::npos) << r.err;
}

TEST(CliExitCodes, ReductionsSubcommandPasses) {
  const auto dir = scratch("reductions");
  const auto r = tool(dir, "reductions --joints 20 --witness '" + std::string(EQ_TEST_DATA) + "/pse2_witness.joint'");
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("PSE-II"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST(CliIngest, SimulateThenIngestMatchesInMemoryCohort) {
  const auto dir = scratch("ingest");
  auto c = reference_run(dir);
  const auto table = run_simulate(c, 3);
  const auto p = c.effective_partition();
  const auto in = ingest(c, p);
  EXPECT_EQ(in.counts.rows_read, table.rows());
  EXPECT_EQ(in.counts.dropped_by_selection, 0u);
  for (const auto& col : in.table.columns()) {
    const auto& orig = table.column(col.name);
    EXPECT_EQ(col.levels, orig.levels);
    EXPECT_EQ(col.codes, orig.codes) << col.name;
  }
  // Estimation on the ingested file equals estimation on the generator output.
  WeightedOptions opt;
  opt.models = c.models;
  const auto direct = decompose_weighted(table, c.roles, p, opt).estimate;
  c.bootstrap.reset();
  const auto report = run_decompose(c, 2);
  EXPECT_EQ(report.body["estimate"]["reduction"].get<double>(), direct.reduction);
  EXPECT_EQ(report.body["estimate"]["observed"].get<double>(), direct.observed);
}

TEST(CliGolden, ReferenceCohortMeaningfulPresetRmpw) {
  const auto dir = scratch("golden");
  auto c = reference_run(dir);
  c.bootstrap.reset();
  const auto e = run_decompose(c, 2).body["estimate"];
  EXPECT_NEAR(e["observed"].get<double>(), 0.17098271615510438, 1e-9);
  EXPECT_NEAR(e["reduction"].get<double>(), 0.06668836488198826, 1e-9);
  EXPECT_NEAR(e["residual"].get<double>(), 0.10429435127314958, 1e-9);
  EXPECT_NEAR(e["additivity_gap"].get<double>(), 0.0, 1e-9);
}

TEST(CliDeterminism, SameSeedSameReportAcrossWorkerCounts) {
  const auto dir = scratch("determinism");
  auto c = reference_run(dir);
  c.bootstrap->replicates = 40;
  std::ofstream(dir / "run.yaml") << to_yaml(c);
  ASSERT_EQ(tool(dir, "decompose -c run.yaml --workers 1 --output a").code, 0);
  ASSERT_EQ(tool(dir, "decompose -c run.yaml --workers 3 --output b").code, 0);
  ASSERT_EQ(tool(dir, "decompose -c run.yaml --workers 3 --output c --seed 2").code, 0);
  const auto a = without_timestamp(slurp(dir / "a.json"));
  const auto b = without_timestamp(slurp(dir / "b.json"));
  // Only the echoed output prefix differs.
  auto ja = nlohmann::json::parse(a), jb = nlohmann::json::parse(b);
  ja.erase("config");
  jb.erase("config");
  EXPECT_EQ(ja.dump(), jb.dump());
  EXPECT_EQ(slurp(dir / "a.txt"), slurp(dir / "b.txt"));
  const auto other = nlohmann::json::parse(slurp(dir / "c.json"));
  EXPECT_NE(other["intervals"]["reduction"], ja["intervals"]["reduction"]);
  EXPECT_EQ(other["estimate"], ja["estimate"]);  // point estimates do not use the seed
}

TEST(CliDeterminism, MonteCarloBackendIndependentOfWorkers) {
  const auto dir = scratch("mc");
  auto c = reference_run(dir);
  c.backend = Backend::MonteCarloG;
  c.draws = 20000;
  c.bootstrap->replicates = 8;
  const auto one = run_decompose(c, 1);
  const auto four = run_decompose(c, 4);
  EXPECT_EQ(one.body.dump(), four.body.dump());
  EXPECT_EQ(one.summary, four.summary);
}

TEST(CliConfig, EchoReplaysTheRun) {
  const auto dir = scratch("echo");
  auto c = reference_run(dir);
  c.bootstrap->replicates = 30;
  c.truncation_percentile = 99.5;
  c.scm = ScmConfig::latent_covariates();
  c.scm.sigma_u = 0.123456789012345678;
  const auto first = run_decompose(c, 2);
  const auto echoed = first.body["config"].get<std::string>();
  EXPECT_EQ(to_yaml(parse_config(echoed)), echoed);
  const auto replay = run_decompose(parse_config(echoed), 2);
  EXPECT_EQ(replay.body.dump(), first.body.dump());
  EXPECT_EQ(parse_config(echoed).scm.sigma_u, c.scm.sigma_u);
}

TEST(CliConfig, ExplicitPartitionEqualsPreset) {
  const auto dir = scratch("partition");
  auto c = reference_run(dir);
  c.bootstrap.reset();
  const auto viaPreset = run_decompose(c, 2).body["estimate"];
  c.partition = c.effective_partition();
  c.preset.reset();
  const auto viaPartition = run_decompose(c, 2).body["estimate"];
  EXPECT_EQ(viaPreset, viaPartition);
}

TEST(CliReport, ContainsRequiredSections) {
  const auto dir = scratch("report");
  auto c = reference_run(dir);
  c.bootstrap->replicates = 20;
  write_report(run_decompose(c, 2), c.output);
  const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  for (const char* k : {"software", "seed", "generated_at", "config", "cohort", "estimate", "intervals",
                        "bootstrap", "weights", "positivity", "assumptions", "models", "warnings"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["software"]["version"], std::string(kVersion));
  EXPECT_EQ(j["assumptions"][0]["status"], "untestable");
  EXPECT_EQ(j["assumptions"][3]["status"], "untestable");
  EXPECT_TRUE(j["models"]["race_ay"]["coefficients"].contains("race=black: age=1:sex=1"));
  const auto txt = slurp(dir / "report.txt");
  EXPECT_NE(txt.find("reduction"), std::string::npos);
  EXPECT_EQ(txt.find(j["generated_at"].get<std::string>()), std::string::npos);
}
