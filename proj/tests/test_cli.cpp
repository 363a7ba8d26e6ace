#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <ncpd/ncpd.hpp>

using namespace ncpd;
namespace fs = std::filesystem;

namespace {

const std::string kCli = NCPD_CLI_PATH;

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ncpd_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  Run r;
  std::string cmd = kCli + " " + args + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

std::string tiny_bench_config(const fs::path& out) {
  return "dims = 12\n"
         "trajectories = radial, cones, tpi, golf\n"
         "methods = adjoint, dc-adjoint, fista\n"
         "n_samples = 12\n"
         "coils = 2\n"
         "fista_iters = 5\n"
         "density_iters = 3\n"
         "output_dir = " + out.string() + "\n";
}

}  // namespace

TEST(Config, DefaultsRoundtrip) {
  BenchConfig cfg;
  EXPECT_EQ(parse_config_text(emit_config(cfg)), cfg);
  EXPECT_EQ(parse_config_text(emit_config(cfg, true)), cfg);
  EXPECT_EQ(parse_config_text(""), cfg);
}

TEST(Config, ModifiedValuesRoundtrip) {
  auto cfg = parse_config_text("dims = 16x24x20\nlr = 0.0025\nnoise_snr_db = 30\nseeds = 3,4\ncompress = true\n");
  EXPECT_EQ(cfg.dims, (MatrixSize{16, 24, 20}));
  EXPECT_DOUBLE_EQ(cfg.train.lr, 0.0025);
  ASSERT_TRUE(cfg.noise_snr_db.has_value());
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(parse_config_text(emit_config(cfg)), cfg);
}

TEST(Config, ErrorsNameKeyAndLine) {
  try {
    parse_config_text("# comment\n\nlr = banana\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "lr");
    EXPECT_EQ(e.line(), 3);
  }
  try {
    parse_config_text("epochs = 5\nwibble = 1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "wibble");
    EXPECT_EQ(e.line(), 2);
  }
  EXPECT_THROW(parse_config_text("epochs =\n"), ConfigError);
  EXPECT_THROW(parse_config_text("just text\n"), ConfigError);
  EXPECT_THROW(parse_config_text("dims = 0\n").validate(), ConfigError);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("no-such-command").code, 2);
  EXPECT_EQ(run("traj gen --kind radial --shots -3 --samples 8 --out /tmp/x.ktraj").code, 2);
  auto dir = scratch("codes");
  write_file(dir / "bad.cfg", "lr = banana\n");
  EXPECT_EQ(run("bench --dry-run --config " + (dir / "bad.cfg").string()).code, 2);
  EXPECT_EQ(run("bench --dry-run --config " + (dir / "missing.cfg").string()).code, 4);
  write_file(dir / "junk.ktraj", "NOPE");
  EXPECT_EQ(run("traj info " + (dir / "junk.ktraj").string()).code, 4);
}

TEST(Cli, TrajectoryGenerateAndInspect) {
  auto dir = scratch("traj");
  auto path = (dir / "r.ktraj").string();
  ASSERT_EQ(run("traj gen --kind radial --shots 64 --samples 16 --out " + path).code, 0);
  auto t = load_trajectory(path);
  EXPECT_EQ(t.n_shots, 64);
  EXPECT_EQ(t.n_samples, 16);
  auto info = run("traj info " + path + " --matrix 16");
  EXPECT_EQ(info.code, 0);
  EXPECT_NE(info.out.find("radial"), std::string::npos);
}

TEST(Cli, DryRunPrintsConfigAndWritesNothing) {
  auto dir = scratch("dry");
  auto out = dir / "out";
  write_file(dir / "c.cfg", tiny_bench_config(out));
  auto r = run("bench --dry-run --config " + (dir / "c.cfg").string());
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(parse_config_text(r.out), parse_config(dir / "c.cfg"));
  EXPECT_FALSE(fs::exists(out));
  auto help = run("bench --help-config");
  EXPECT_EQ(help.code, 0);
  EXPECT_EQ(parse_config_text(help.out), BenchConfig{});
}

TEST(Cli, BenchWritesOneRowPerCaseAndMetricsRecompute) {
  auto dir = scratch("bench");
  auto out = dir / "out";
  write_file(dir / "c.cfg", tiny_bench_config(out));
  ASSERT_EQ(run("bench --config " + (dir / "c.cfg").string()).code, 0);
  auto rows = read_csv(out / "results.csv");
  ASSERT_EQ(rows.size(), 13u);
  EXPECT_EQ(rows[0].size(), 8u);
  std::set<std::string> pairs;
  for (std::size_t i = 1; i < rows.size(); ++i) pairs.insert(rows[i][0] + "/" + rows[i][1]);
  EXPECT_EQ(pairs.size(), 12u);

  auto cases = read_csv(out / "cases.csv");
  ASSERT_EQ(cases.size(), rows.size());
  for (std::size_t i = 1; i < rows.size(); ++i) {
    auto m = run("metrics --x " + cases[i][4] + " --ref " + cases[i][5]);
    ASSERT_EQ(m.code, 0);
    double p = 0, s = 0;
    std::sscanf(m.out.c_str(), "psnr_db %lf\nssim %lf", &p, &s);
    EXPECT_NEAR(p, std::stod(rows[i][4]), 1e-9) << rows[i][0] << " " << rows[i][1];
    EXPECT_NEAR(s, std::stod(rows[i][5]), 1e-6);
  }
}

TEST(Cli, SimulateThenReconstruct) {
  auto dir = scratch("sim");
  auto traj = (dir / "t.ktraj").string();
  ASSERT_EQ(run("traj gen --kind radial --shots 96 --samples 12 --out " + traj).code, 0);
  ASSERT_EQ(run("sim acquire --traj " + traj + " --matrix 12 --coils 2 --out-dir " + dir.string()).code, 0);
  for (auto f : {"kspace.kspc", "maps.smap", "density.dcw", "phantom.cvol", "target.cvol"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  auto rec = (dir / "dc.cvol").string();
  ASSERT_EQ(run("recon dc-adjoint --traj " + traj + " --kspace " + (dir / "kspace.kspc").string() + " --density " +
                (dir / "density.dcw").string() + " --maps " + (dir / "maps.smap").string() + " --matrix 12 --out " + rec)
                .code,
            0);
  auto x = load_cvol<double>(rec);
  EXPECT_EQ(x.dims, (MatrixSize{12, 12, 12}));
  EXPECT_EQ(run("recon dc-adjoint --traj " + traj + " --kspace " + (dir / "kspace.kspc").string() +
                " --matrix 12 --out " + rec + " --maps " + (dir / "nope.smap").string())
                .code,
            4);
}
