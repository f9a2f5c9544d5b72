// Command-line harness: run, gen-toy, gradcheck, bounds.

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ovi/config.hpp"
#include "ovi/data.hpp"
#include "ovi/errors.hpp"
#include "ovi/experiment.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& out_dir) {
  ovi::ExperimentConfig cfg;
  try {
    cfg = ovi::parse_config_file(config_path);
    ovi::validate_config(cfg);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return ovi::kExitConfig;
  }
  try {
    const auto result = ovi::run_experiment(cfg, out_dir);
    const auto& s = result.summary;
    std::cout << "comparator " << ovi::format_double(s["comparator"]["value"].get<double>()) << " ("
              << s["comparator"]["method"].get<std::string>() << ")\n";
    for (const auto& [name, a] : s["algorithms"].items()) {
      std::cout << name << "  final_avg_loss " << ovi::format_double(a["final_avg_loss"].get<double>())
                << "  regret " << ovi::format_double(a["regret"].get<double>()) << '\n';
    }
    return ovi::kExitOk;
  } catch (const ovi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return ovi::kExitConfig;
  } catch (const ovi::StepError& e) {
    std::cerr << "runtime error at step " << e.step() << ": " << e.what() << '\n';
    return ovi::kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return ovi::kExitRuntime;
  }
}

int cmd_gen_toy(std::size_t n, std::uint64_t seed, const std::string& out_path) {
  if (n == 0) {
    std::cerr << "gen-toy: n must be >= 1\n";
    return ovi::kExitConfig;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    std::cerr << "gen-toy: cannot write '" << out_path << "'\n";
    return ovi::kExitRuntime;
  }
  ovi::write_toy_csv(out, ovi::gen_toy_classification(n, seed));
  out.flush();
  if (!out) {
    std::cerr << "gen-toy: write failed\n";
    return ovi::kExitRuntime;
  }
  return ovi::kExitOk;
}

int cmd_gradcheck(const std::string& loss, std::size_t trials, double tol, std::uint64_t seed,
                  std::size_t hidden_width, std::size_t samples) {
  ovi::LossKind kind;
  try {
    kind = ovi::parse_loss_kind(loss, hidden_width);
    if (trials == 0) throw ovi::ConfigError("trials must be >= 1");
    if (!(tol > 0.0)) throw ovi::ConfigError("tol must be positive");
  } catch (const std::exception& e) {
    std::cerr << "gradcheck: " << e.what() << '\n';
    return ovi::kExitConfig;
  }
  try {
    const auto rep = ovi::gradcheck(kind, trials, tol, seed, samples);
    if (kind.has_closed_form()) {
      std::cout << "max relative error " << ovi::format_double(rep.max_error) << " over " << rep.comparisons
                << " components (tol " << ovi::format_double(tol) << ")\n";
    } else {
      std::cout << "max |z| " << ovi::format_double(rep.max_error) << " over " << rep.comparisons
                << " components (familywise threshold " << ovi::format_double(rep.threshold) << " for "
                << ovi::format_double(tol) << " standard errors)\n";
    }
    std::cout << (rep.passed ? "PASS" : "FAIL") << '\n';
    return rep.passed ? ovi::kExitOk : ovi::kExitCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "gradcheck: " << e.what() << '\n';
    return ovi::kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online variational inference experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("--config", config_path, "Config file")->required();
  run->add_option("--out", out_dir, "Output directory")->required();

  std::size_t n = 10000;
  std::uint64_t toy_seed = 1;
  std::string toy_out;
  auto* gen = app.add_subcommand("gen-toy", "Write the two-class Gaussian toy dataset as CSV");
  gen->add_option("--n", n, "Number of rows")->required();
  gen->add_option("--seed", toy_seed, "Seed")->required();
  gen->add_option("--out", toy_out, "Output CSV path")->required();

  std::string loss;
  std::size_t trials = 100;
  double tol = 1e-5;
  std::uint64_t gc_seed = 1;
  std::size_t hidden_width = 3;
  std::size_t samples = 100000;
  auto* gc = app.add_subcommand("gradcheck", "Compare expected-loss gradients with finite differences");
  gc->add_option("--loss", loss, "hinge | squared_linear | nn")->required();
  gc->add_option("--trials", trials, "Random instances");
  gc->add_option("--tol", tol, "Relative tolerance, or standard errors for nn");
  gc->add_option("--seed", gc_seed, "Seed");
  gc->add_option("--hidden-width", hidden_width, "Hidden units for nn");
  gc->add_option("--samples", samples, "Monte Carlo samples for nn");

  std::string run_dir, theorem = "all";
  auto* bounds = app.add_subcommand("bounds", "Re-check regret bounds from a run directory");
  bounds->add_option("--run", run_dir, "Run directory")->required();
  bounds->add_option("--theorem", theorem, "1 | 2 | 3 | 4 | all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : ovi::kExitConfig;
  }

  if (*run) return cmd_run(config_path, out_dir);
  if (*gen) return cmd_gen_toy(n, toy_seed, toy_out);
  if (*gc) return cmd_gradcheck(loss, trials, tol, gc_seed, hidden_width, samples);
  try {
    return ovi::check_bounds(run_dir, theorem, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "bounds: " << e.what() << '\n';
    return ovi::kExitRuntime;
  }
}
