#include <gtest/gtest.h>

#include <cstdlib>
#include <random>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "qtraj/cli.hpp"
#include "test_util.hpp"

using namespace qtraj;
using namespace qtraj::cli;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("qtraj_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

ConfigFile parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in, "test.cfg");
}

int error_line(const std::string& text) {
  try {
    resolve(parse(text));
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// File contents keyed by relative path; manifest lines named in `skip` dropped.
std::map<std::string, std::string> snapshot(const fs::path& dir, const std::vector<std::string>& skip) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string body = slurp(e.path());
    if (e.path().filename() == "manifest.txt") {
      std::stringstream in(body);
      std::string line, kept;
      while (std::getline(in, line)) {
        bool drop = false;
        for (const auto& k : skip) drop = drop || line.starts_with(k + " =");
        if (!drop) kept += line + "\n";
      }
      body = kept;
    }
    out[fs::relative(e.path(), dir).generic_string()] = body;
  }
  return out;
}

}  // namespace

//---------------------------------------------------------------------------//
// Config parsing
//---------------------------------------------------------------------------//

TEST(Config, ParsesSectionsAndDefaults) {
  const auto rc = resolve(parse(
      "# comment\n"
      "protocol = zeno-blockade\n"
      "dt = 2e-3   # inline comment\n"
      "\n"
      "[zeno-blockade]\n"
      "omega_r = 2*pi*6.23\n"
      "blockade = false\n"));
  EXPECT_EQ(rc.protocol, "zeno-blockade");
  EXPECT_DOUBLE_EQ(rc.dt(), 2e-3);
  EXPECT_DOUBLE_EQ(rc.real("omega_r"), 2.0 * std::numbers::pi * 6.23);
  EXPECT_FALSE(rc.flag("blockade"));
  EXPECT_EQ(rc.count("n_max"), 10u);
  EXPECT_DOUBLE_EQ(rc.real("gamma"), 2.0 * std::numbers::pi * 0.77);
  EXPECT_EQ(rc.line("omega_r"), 6);
}

TEST(Config, ErrorsAreLineAnchored) {
  EXPECT_EQ(error_line("protocol = ensemble\n\nbogus = 1\n"), 3);
  EXPECT_EQ(error_line("protocol = ensemble\n[ensemble]\neta = 1.5\n"), 3);
  EXPECT_EQ(error_line("protocol = ensemble\n[ensemble]\neta = abc\n"), 3);
  EXPECT_EQ(error_line("protocol = ensemble\n[rabi]\n"), 2);
  EXPECT_EQ(error_line("\nprotocol = nope\n"), 2);
  EXPECT_EQ(error_line("dt = 1\n"), 1);
  EXPECT_EQ(error_line("protocol = rabi\n[rabi]\nfeedback = maybe\n"), 3);
  EXPECT_EQ(error_line("protocol = phase\n[phase]\nstrategy = psychic\n"), 3);
  EXPECT_EQ(error_line("protocol = phase\nn_trajectories = 0\n"), 2);
  EXPECT_EQ(error_line("protocol = phase\nn_trajectories = -3\n"), 2);
  EXPECT_THROW(parse("protocol = rabi\nprotocol = rabi\n"), ConfigError);
  EXPECT_THROW(parse("protocol = rabi\njust words\n"), ConfigError);
  EXPECT_THROW(parse("[rabi\n"), ConfigError);
  try {
    parse("protocol = rabi\n\n\nno equals\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 4);
    EXPECT_NE(std::string(e.what()).find("test.cfg:4:"), std::string::npos);
    EXPECT_EQ(e.code(), ErrorCode::invalid_config);
  }
}

TEST(Config, EchoRoundTrips) {
  const auto a = resolve(parse("protocol = rabi\nmaster_seed = 18446744073709551615\n[rabi]\ngain = 0.3\n"));
  const auto b = resolve(parse(echo_config(a)));
  EXPECT_EQ(echo_config(a), echo_config(b));
  EXPECT_EQ(b.master_seed(), 18446744073709551615ull);
  EXPECT_DOUBLE_EQ(b.real("gain"), 0.3);
}

TEST(Config, EveryProtocolResolvesWithDefaults) {
  for (const auto& s : protocol_schemas()) {
    const auto rc = resolve(parse("protocol = " + s.name + "\n"));
    EXPECT_NO_THROW(qtraj::cli::detail::prepare(rc)) << s.name;
  }
}

TEST(Config, NumbersFormatShortestRoundTrip) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(gen) * std::pow(10.0, static_cast<int>(gen() % 40) - 20);
    EXPECT_EQ(*parse_number(format_double(x)), x);
  }
  EXPECT_EQ(format_double(0.001), "0.001");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_FALSE(parse_number("1e400").has_value());
  EXPECT_FALSE(parse_number("2*").has_value());
  EXPECT_DOUBLE_EQ(*parse_number("-pi"), -std::numbers::pi);
}

//---------------------------------------------------------------------------//
// Runs
//---------------------------------------------------------------------------//

TEST(Run, EnsembleArtifactsParseBack) {
  const fs::path d = scratch("ensemble");
  const auto cfg = write_config(d, "e.cfg",
                                "protocol = ensemble\nn_trajectories = 200\nduration = 2\nwrite_records = 2\n"
                                "[ensemble]\neta = 0.4\n");
  const auto res = run(cfg, 2, std::nullopt, d / "out");
  for (const char* f : {"manifest.txt", "seeds.csv", "states.csv", "lindblad.csv", "records/traj_00000.csv",
                        "records/states_00001.csv"})
    EXPECT_TRUE(fs::exists(d / "out" / f)) << f;
  EXPECT_FALSE(fs::exists(d / "out" / "records/traj_00002.csv"));
  for (const auto& e : fs::recursive_directory_iterator(d / "out"))
    if (e.path().extension() == ".csv") EXPECT_NO_THROW(read_csv(e.path())) << e.path();
  const auto rd = open_run(d / "out");
  EXPECT_EQ(rd.state_shape, SpaceShape::qubit());
  EXPECT_EQ(read_states(d / "out" / "states.csv", rd.state_shape).states.size(), 201u);
  const Table seeds = read_csv(d / "out" / "seeds.csv");
  ASSERT_EQ(seeds.rows.size(), 200u);
  EXPECT_EQ(*parse_count(seeds.rows[7][2]), WienerStream(1, 7).key());
  const Table rec = read_csv(d / "out" / "records/traj_00000.csv");
  EXPECT_EQ(rec.header, (std::vector<std::string>{"t_us", "V", "dW"}));
  EXPECT_EQ(rec.rows.size(), 2000u);
  bool has_gap = false;
  for (const auto& [k, v] : res.summary)
    if (k == "max_gap_z") has_gap = *parse_number(v) < 0.1;
  EXPECT_TRUE(has_gap);
}

TEST(Run, DeterministicAcrossJobsAndManifestRerun) {
  const fs::path d = scratch("determinism");
  const auto cfg = write_config(d, "r.cfg",
                                "protocol = rabi\nn_trajectories = 24\nduration = 2\nwrite_records = 3\n"
                                "master_seed = 99\n[rabi]\ngain = 0.2\n");
  run(cfg, 1, std::nullopt, d / "j1");
  run(cfg, 8, std::nullopt, d / "j8");
  const auto a = snapshot(d / "j1", {"wall_clock_s", "output"}), b = snapshot(d / "j8", {"wall_clock_s", "output"});
  EXPECT_EQ(a, b);
  run(d / "j1" / "manifest.txt", 3, std::nullopt, d / "again");
  EXPECT_EQ(a, snapshot(d / "again", {"wall_clock_s", "output"}));
  // A different seed changes the records.
  run(cfg, 1, 100, d / "s100");
  EXPECT_NE(slurp(d / "j1" / "records/traj_00000.csv"), slurp(d / "s100" / "records/traj_00000.csv"));
}

TEST(Run, StaleRecordsRemoved) {
  const fs::path d = scratch("stale");
  const auto cfg = write_config(d, "t.cfg", "protocol = trajectory\nn_trajectories = 3\nduration = 0.1\n");
  run(cfg, 1, std::nullopt, d / "out");
  EXPECT_TRUE(fs::exists(d / "out/records/traj_00002.csv"));
  run(resolve(parse("protocol = trajectory\nn_trajectories = 1\nduration = 0.1\n")), 1, std::nullopt, d / "out");
  EXPECT_FALSE(fs::exists(d / "out/records/traj_00002.csv"));
}

TEST(Run, ValidationBeforeComputation) {
  const fs::path d = scratch("invalid");
  // Gain guard and step guard surface as config errors on the protocol line.
  const auto bad_gain = write_config(d, "g.cfg", "protocol = rabi\n[rabi]\ngain = 3\n");
  try {
    run(bad_gain, 1, std::nullopt, d / "out");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 1);
  }
  const auto big_dt = write_config(d, "d.cfg", "protocol = ensemble\ndt = 0.5\n");
  EXPECT_THROW(run(big_dt, 1, std::nullopt, d / "out"), ConfigError);
  EXPECT_FALSE(fs::exists(d / "out" / "manifest.txt"));
}

TEST(Run, NumericalFailureNamesTrajectoryAndStep) {
  // Without the tail cut the flat-mode rate 1/(T - t) outgrows the step guard.
  const fs::path d = scratch("numerical");
  const auto cfg = write_config(d, "p.cfg", "protocol = phase\nn_trajectories = 2\ndt = 1e-3\n[phase]\ntail_steps = 0\n");
  try {
    run(cfg, 1, std::nullopt, d / "out");
    FAIL();
  } catch (const RunFailure& e) {
    EXPECT_EQ(e.trajectory(), 0u);
    EXPECT_NE(std::string(e.what()).find("step "), std::string::npos) << e.what();
  }
}

TEST(Run, HalfParityFidelityTable) {
  const fs::path d = scratch("halfparity");
  const auto cfg = write_config(d, "h.cfg", "protocol = halfparity\nn_trajectories = 4\n");
  const auto res = run(cfg, 2, std::nullopt, d / "out");
  std::map<std::string, double> s;
  for (const auto& [k, v] : res.summary) s[k] = *parse_number(v);
  EXPECT_NEAR(s["gamma_t_near_2ln2"], 2.0 * std::log(2.0), 0.006);
  EXPECT_NEAR(s["fidelity_near_2ln2"], 0.75, 0.01);
  EXPECT_GE(s["fidelity_final"], 0.99);
  EXPECT_LE(s["max_trace_distance_to_first"], 1e-6);
  const auto f = emit(d / "out", {.quantity = "fidelity"});
  const Table t = read_csv(f);
  const auto fid = t.column("fidelity"), an = t.column("analytic");
  for (std::size_t k = 0; k < fid.size(); ++k) EXPECT_NEAR(fid[k], an[k], 1e-5);
}

//---------------------------------------------------------------------------//
// Plot data
//---------------------------------------------------------------------------//

TEST(Emit, BlochOfUnmeasuredRabi) {
  const fs::path d = scratch("bloch");
  const auto cfg = write_config(d, "t.cfg",
                                "protocol = trajectory\nduration = 3\nthinning = 7\n"
                                "[trajectory]\ngamma_d = 0\nomega_r = 2*pi\ninitial = e\n");
  run(cfg, 1, std::nullopt, d / "out");
  for (std::optional<std::size_t> traj : {std::optional<std::size_t>(), std::optional<std::size_t>(0)}) {
    const Table t = read_csv(emit(d / "out", {.quantity = "bloch", .trajectory = traj}));
    EXPECT_EQ(t.header, (std::vector<std::string>{"t_us", "x", "y", "z"}));
    const auto ts = t.column("t_us"), z = t.column("z");
    ASSERT_GT(ts.size(), 400u);
    for (std::size_t k = 0; k < ts.size(); ++k) EXPECT_NEAR(z[k], std::cos(2.0 * std::numbers::pi * ts[k]), 1e-6);
  }
  const Table r = read_csv(emit(d / "out", {.quantity = "record"}));
  EXPECT_EQ(r.header, (std::vector<std::string>{"t_us", "V"}));
}

TEST(Emit, WignerSliceOfVacuum) {
  const fs::path d = scratch("wigner");
  const auto cfg = write_config(d, "w.cfg", "protocol = wigner\n[wigner]\nstate = vacuum\nn_max = 8\n");
  const auto res = run(cfg, 1, std::nullopt, d / "out");
  const Table t = read_csv(emit(d / "out", {.quantity = "wigner-slice"}));
  const auto re = t.column("re"), w = t.column("w");
  ASSERT_EQ(re.size(), 61u);
  EXPECT_EQ(re[30], 0.0);
  EXPECT_NEAR(w[30], 0.6366, 1e-3);
  for (std::size_t k = 0; k < re.size(); ++k) EXPECT_NEAR(w[k], 2.0 / std::numbers::pi * std::exp(-2.0 * re[k] * re[k]), 1e-12);
  const Table g = read_csv(d / "out" / "wigner.csv");
  EXPECT_EQ(g.rows.size(), 61u * 61u);
}

TEST(Emit, SurvivalFeedsEscapeRateFit) {
  const fs::path d = scratch("survival");
  const auto cfg = write_config(d, "z.cfg",
                                "protocol = zeno-drag\nn_trajectories = 2000\nduration = 3\ndt = 1e-3\nthinning = 375\n"
                                "[zeno-drag]\nnu = 1\ngamma_d = 25\n");
  run(cfg, 1, std::nullopt, d / "out");
  const Table t = read_csv(emit(d / "out", {.quantity = "survival"}));
  const auto fit = survival_fit(t.column("t_us"), t.column("survival"));
  EXPECT_NEAR(fit.rate, 1.0 / 25.0, 0.2 / 25.0);
}

TEST(Emit, PhaseHistogramIsNormalized) {
  const fs::path d = scratch("phasehist");
  const auto cfg = write_config(d, "p.cfg", "protocol = phase\nn_trajectories = 200\ndt = 1e-3\n[phase]\nbins = 12\n");
  run(cfg, 1, std::nullopt, d / "out");
  const Table t = read_csv(emit(d / "out", {.quantity = "phase-hist"}));
  const auto h = t.column("density"), c = t.column("canonical");
  ASSERT_EQ(h.size(), 12u);
  double sh = 0.0, sc = 0.0;
  for (std::size_t k = 0; k < h.size(); ++k) sh += h[k], sc += c[k];
  EXPECT_NEAR(sh * 2.0 * std::numbers::pi / 12.0, 1.0, 1e-12);
  EXPECT_NEAR(sc * 2.0 * std::numbers::pi / 12.0, 1.0, 1e-12);
}

TEST(Emit, RejectsMismatchedQuantity) {
  const fs::path d = scratch("mismatch");
  const auto cfg = write_config(d, "t.cfg", "protocol = trajectory\nduration = 0.1\n");
  run(cfg, 1, std::nullopt, d / "out");
  qtraj::testing::expect_error(ErrorCode::invalid_argument, [&] { emit(d / "out", {.quantity = "phase-hist"}); });
  qtraj::testing::expect_error(ErrorCode::invalid_argument, [&] { emit(d / "out", {.quantity = "wigner-slice"}); });
  qtraj::testing::expect_error(ErrorCode::invalid_argument, [&] { emit(d / "out", {.quantity = "nonsense"}); });
  qtraj::testing::expect_error(ErrorCode::invalid_argument, [&] { emit(d / "out", {.quantity = "bloch", .trajectory = 5}); });
}

//---------------------------------------------------------------------------//
// Executable
//---------------------------------------------------------------------------//

#ifdef QTRAJ_CLI_PATH
namespace {

int shell(const std::string& cmd, const fs::path& log) {
  const int rc = std::system((cmd + " > " + log.string() + " 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

int exec(const std::string& args, const fs::path& log) { return shell(std::string(QTRAJ_CLI_PATH) + " " + args, log); }

}  // namespace

TEST(Executable, ExitCodes) {
  const fs::path d = scratch("exe");
  const auto good = write_config(d, "good.cfg", "protocol = trajectory\nduration = 0.2\n");
  EXPECT_EQ(exec("run " + good.string() + " --out " + (d / "run").string() + " --seed 4 --jobs 2", d / "log"), 0);
  EXPECT_NE(slurp(d / "log").find("final_z = "), std::string::npos);
  EXPECT_EQ(exec("emit " + (d / "run").string() + " --quantity bloch", d / "log"), 0);
  EXPECT_TRUE(fs::exists(d / "run" / "plot_bloch.csv"));
  EXPECT_EQ(exec("emit " + (d / "run").string() + " --quantity nonsense", d / "log"), 2);

  const auto bad = write_config(d, "bad.cfg", "protocol = trajectory\n\n[trajectory]\neta = 2\n");
  EXPECT_EQ(exec("run " + bad.string(), d / "log"), 2);
  EXPECT_NE(slurp(d / "log").find("bad.cfg:4:"), std::string::npos) << slurp(d / "log");
  EXPECT_EQ(exec("run " + (d / "missing.cfg").string(), d / "log"), 3);
  EXPECT_EQ(exec("run", d / "log"), 2);

  const auto num = write_config(d, "num.cfg", "protocol = phase\nn_trajectories = 1\ndt = 1e-3\n[phase]\ntail_steps = 0\n");
  EXPECT_EQ(exec("run " + num.string() + " --out " + (d / "num").string(), d / "log"), 3);
  EXPECT_NE(slurp(d / "log").find("trajectory 0"), std::string::npos) << slurp(d / "log");
}

TEST(Executable, JobsFromEnvironment) {
  const fs::path d = scratch("env");
  const auto cfg = write_config(d, "e.cfg", "protocol = ensemble\nn_trajectories = 16\nduration = 0.5\n");
  EXPECT_EQ(exec("run " + cfg.string() + " --out " + (d / "a").string() + " --jobs 1", d / "log"), 0);
  EXPECT_EQ(shell("env QTRAJ_JOBS=8 " + std::string(QTRAJ_CLI_PATH) + " run " + cfg.string() + " --out " +
                      (d / "b").string(),
                  d / "log"),
            0);
  ::setenv("QTRAJ_JOBS", "3", 1);
  EXPECT_EQ(default_jobs(), 3u);
  ::unsetenv("QTRAJ_JOBS");
  EXPECT_EQ(default_jobs(), 1u);
  EXPECT_EQ(snapshot(d / "a", {"wall_clock_s", "output"}), snapshot(d / "b", {"wall_clock_s", "output"}));
}
#endif
