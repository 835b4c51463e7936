#include <CLI11.hpp>

#include "caccsim/cli.hpp"

int main(int argc, char** argv) {
  caccsim::init_logging();
  CLI::App app{"Freeway platooning simulator"};
  app.require_subcommand(1);

  std::string config, out, run, a, b, compare_out;
  unsigned parallel = 1;
  double alpha = 0.05;
  bool merge = false;

  auto* sim = app.add_subcommand("simulate", "Run one scenario");
  sim->add_option("--config", config, "Scenario JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", out, "Output directory")->required();

  auto* ana = app.add_subcommand("analyze", "Compute metrics for a run directory");
  ana->add_option("--run", run, "Run directory")->required()->check(CLI::ExistingDirectory);
  ana->add_flag("--merge-episodes", merge, "Count consecutive hard-brake samples as one episode");

  auto* swp = app.add_subcommand("sweep", "Run a strategy x MPR x seed grid");
  swp->add_option("--config", config, "Sweep JSON")->required()->check(CLI::ExistingFile);
  swp->add_option("--out", out, "Output directory")->required();
  swp->add_option("--parallel", parallel, "Worker threads")->check(CLI::PositiveNumber);

  auto* cmp = app.add_subcommand("compare", "K-S comparison of hard-brake samples of two analyzed runs");
  cmp->add_option("--a", a, "First run directory")->required()->check(CLI::ExistingDirectory);
  cmp->add_option("--b", b, "Second run directory")->required()->check(CLI::ExistingDirectory);
  cmp->add_option("--alpha", alpha, "Significance level")->check(CLI::Range(0.0, 1.0));
  cmp->add_option("--out", compare_out, "Output file (default <a>/compare.json)");

  CLI11_PARSE(app, argc, argv);

  if (*sim) return caccsim::cmd_simulate(config, out);
  if (*ana) return caccsim::cmd_analyze(run, caccsim::AnalyzeOptions{merge});
  if (*swp) return caccsim::cmd_sweep(config, out, parallel);
  if (*cmp) {
    const std::filesystem::path dest =
        compare_out.empty() ? std::filesystem::path(a) / caccsim::kCompareFile : std::filesystem::path(compare_out);
    return caccsim::cmd_compare(a, b, alpha, dest);
  }
  return 2;
}
