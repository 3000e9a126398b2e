#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "qtraj/cli.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

int do_run(const std::string& config, std::optional<std::uint64_t> seed, unsigned jobs,
           std::optional<std::string> out) {
  const auto res = qtraj::cli::run(qtraj::cli::fs::path(config), jobs, seed,
                                   out ? std::optional<qtraj::cli::fs::path>(*out) : std::nullopt);
  std::cout << "run_dir = " << res.dir.generic_string() << "\n";
  for (const auto& [k, v] : res.summary) std::cout << k << " = " << v << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qtraj: continuous-measurement trajectory simulations"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run a protocol config");
  std::string config;
  std::uint64_t seed = 0;
  unsigned jobs = qtraj::default_jobs();
  std::string out;
  run->add_option("config", config, "Config file")->required();
  auto* seed_opt = run->add_option("--seed", seed, "Override master_seed");
  run->add_option("--jobs", jobs, "Worker threads (default QTRAJ_JOBS or 1)")->check(CLI::PositiveNumber);
  auto* out_opt = run->add_option("--out", out, "Output directory");

  auto* emit = app.add_subcommand("emit", "Write plot data from a run directory");
  std::string run_dir;
  qtraj::cli::EmitOptions eo;
  std::size_t trajectory = 0;
  double time = 0.0;
  int bins = 0;
  std::string emit_out;
  emit->add_option("run-dir", run_dir, "Run directory")->required();
  emit->add_option("--quantity,-q", eo.quantity, "Quantity")
      ->required()
      ->check(CLI::IsMember(qtraj::cli::emit_quantities()));
  auto* traj_opt = emit->add_option("--trajectory", trajectory, "Per-trajectory files of this index");
  auto* time_opt = emit->add_option("--time", time, "wigner-slice: time in us (default last)");
  auto* bins_opt = emit->add_option("--bins", bins, "phase-hist: bin count")->check(CLI::PositiveNumber);
  emit->add_option("--extent", eo.extent, "wigner-slice: half width")->check(CLI::PositiveNumber);
  emit->add_option("--points", eo.points, "wigner-slice: sample count")->check(CLI::PositiveNumber);
  auto* eout_opt = emit->add_option("--out", emit_out, "Output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      return do_run(config, seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt, jobs,
                    out_opt->count() ? std::optional<std::string>(out) : std::nullopt);
    }
    if (*traj_opt) eo.trajectory = trajectory;
    if (*time_opt) eo.time = time;
    if (*bins_opt) eo.bins = bins;
    if (*eout_opt) eo.out = emit_out;
    std::cout << qtraj::cli::emit(run_dir, eo).generic_string() << "\n";
    return 0;
  } catch (const qtraj::cli::ConfigError& e) {
    std::cerr << "qtraj: " << e.what() << "\n";
    return kExitConfig;
  } catch (const qtraj::Error& e) {
    std::cerr << "qtraj: " << e.what() << "\n";
    const bool usage = *emit && (e.code() == qtraj::ErrorCode::invalid_argument || e.code() == qtraj::ErrorCode::io);
    return usage ? kExitConfig : kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "qtraj: " << e.what() << "\n";
    return kExitNumerical;
  }
}
