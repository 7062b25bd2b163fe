#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "eqdecomp/cli.hpp"

using namespace eqdecomp;

namespace {

struct Overrides {
  std::string config, input, output, backend, standardization, preset, positivity;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replicates;
  std::optional<double> truncation;
  std::size_t workers = default_workers();
};

void add_common(CLI::App* cmd, Overrides& o, bool need_config) {
  auto* c = cmd->add_option("-c,--config", o.config, "YAML run configuration");
  if (need_config) c->required();
  cmd->add_option("--input", o.input, "cohort CSV (overrides 'input')");
  cmd->add_option("--output", o.output, "output prefix or file (overrides 'output')");
  cmd->add_option("--seed", o.seed, "RNG seed (overrides 'seed')");
  cmd->add_option("--workers", o.workers, "worker threads; results do not depend on it");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (!o.input.empty()) c.input = o.input;
  if (!o.output.empty()) c.output = o.output;
  if (o.seed) c.seed = *o.seed;
  if (!o.backend.empty()) c.backend = parse_backend(o.backend);
  if (!o.standardization.empty()) c.standardization = parse_standardization(o.standardization);
  if (!o.preset.empty()) {
    c.preset = static_cast<int>(parse_preset(o.preset));
    c.partition.reset();
  }
  if (o.replicates) {
    if (!c.bootstrap) c.bootstrap = BootstrapConfig{};
    c.bootstrap->replicates = *o.replicates;
    c.bootstrap->validate();
  }
  if (o.truncation) c.truncation_percentile = *o.truncation;
  if (!o.positivity.empty()) {
    if (o.positivity != "warn" && o.positivity != "strict")
      throw ValidationError("--positivity must be warn or strict");
    c.strict_positivity = o.positivity == "strict";
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disparity decomposition under allowability partitions"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Overrides dec, chk, sim;
  auto* decompose = app.add_subcommand("decompose", "estimate observed, reduced, and residual disparity");
  add_common(decompose, dec, true);
  decompose->add_option("--backend", dec.backend, "rmpw | iorw | montecarlo | exact");
  decompose->add_option("--standardization", dec.standardization, "pooled | r0 | r0prime");
  decompose->add_option("--preset", dec.preset, "allowability preset 1-6 (replaces 'partition')");
  decompose->add_option("--replicates", dec.replicates, "bootstrap replicates");
  decompose->add_option("--positivity", dec.positivity, "warn | strict");
  decompose->add_option("--truncation", dec.truncation, "weight truncation percentile");

  auto* check = app.add_subcommand("check", "positivity and common-support diagnostics only");
  add_common(check, chk, true);
  check->add_option("--standardization", chk.standardization, "pooled | r0 | r0prime");
  check->add_option("--preset", chk.preset, "allowability preset 1-6");

  std::optional<std::size_t> sim_n;
  std::string generator;
  auto* simulate = app.add_subcommand("simulate", "draw a cohort from the structural generator and write CSV");
  add_common(simulate, sim, false);
  simulate->get_option("--seed")->required();
  simulate->add_option("-n,--n", sim_n, "cohort size before selection");
  simulate->add_option("--generator", generator, "reference | latent_covariates (overrides simulate.scm)");

  std::size_t joints = 100, red_workers = default_workers();
  std::uint64_t red_seed = 20240;
  std::string witness_path;
  auto* reductions = app.add_subcommand("reductions", "check preset reductions to classical estimators");
  reductions->add_option("--joints", joints, "random joints per formula")->check(CLI::PositiveNumber);
  reductions->add_option("--seed", red_seed, "seed for the random joints");
  reductions->add_option("--witness", witness_path, "joint file on which the two-intervention contrast must differ");
  reductions->add_option("--workers", red_workers, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*decompose) {
      const auto c = resolve(dec);
      const auto report = run_decompose(c, dec.workers);
      write_report(report, c.output);
      std::cout << report.summary;
      return kExitOk;
    }
    if (*check) {
      const auto c = resolve(chk);
      const auto report = run_check(c);
      write_report(report, c.output);
      std::cout << report.summary;
      return report.body["positivity"]["ok"].get<bool>() ? kExitOk : kExitPositivity;
    }
    if (*simulate) {
      auto c = resolve(sim);
      if (sim_n) c.simulate_n = *sim_n;
      if (!generator.empty()) c.scm = detail::read_scm(YAML::Node(generator));
      const auto table = run_simulate(c, sim.workers);
      const auto path = sim.output.empty() ? (c.input.empty() ? std::string("cohort.csv") : c.input) : sim.output;
      write_csv(path, table);
      std::cout << "wrote " << table.rows() << " rows to " << path << "\n";
      return kExitOk;
    }
    if (*reductions) {
      ReductionSuiteOptions opt;
      opt.joints = joints;
      opt.seed = red_seed;
      opt.workers = red_workers;
      if (!witness_path.empty()) {
        std::ifstream in(witness_path);
        if (!in) throw ValidationError("cannot open witness joint '" + witness_path + "'");
        std::stringstream text;
        text << in.rdbuf();
        opt.witness = reduction_instance(joint_from_text(text.str()));
      }
      const auto rows = run_reduction_suite(opt);
      std::cout << format_reduction_table(rows);
      const bool ok = std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.passed; });
      return ok ? kExitOk : kExitGeneric;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitGeneric;
}
