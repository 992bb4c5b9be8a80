#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace mreit;
namespace fs = std::filesystem;

namespace {

const std::string kSmall = R"([experiment]
name = small

[grid]
nx = 32
ny = 32
fov_x = 2.0
fov_y = 2.0

[phantom]
kind = toy_lens
blur_nu = 2
blur_window = 5

[current]
amplitude = 0.01

[reconstruction]
max_iterations = 6
stop_on_tolerance = false

[data]
reference_mode = true
stray_b = 1e-8

[output]
heatmaps = false
snapshots = 1, 5
)";

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mreit_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string(MREIT_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void expect_config_error(const std::string& text, const std::string& fragment) {
  try {
    parse_config(text, "t.cfg");
    ADD_FAILURE() << "expected a config error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"toy", "shepp", "torso"}) {
    const auto cfg = load_config(std::string(MREIT_SOURCE_DIR) + "/configs/" + name + ".cfg");
    EXPECT_EQ(cfg.name, name);
    EXPECT_EQ(cfg.nx, 128);
    EXPECT_TRUE(cfg.blur.has_value());
    EXPECT_NE(validate_config(cfg).find("interior pixels"), std::string::npos);
  }
}

TEST(Config, NegativeCurrentNamesLine) {
  expect_config_error("[current]\namplitude = -0.01\n", "t.cfg:2:");
}

TEST(Config, UnknownKeyNamesLine) {
  expect_config_error("[grid]\nnx = 32\nnz = 4\n", "t.cfg:3:");
  expect_config_error("[grid]\nnx = 32\n[bogus]\na = 1\n", "bogus");
}

TEST(Config, MalformedValues) {
  expect_config_error("[grid]\nnx = many\n", "t.cfg:2:");
  expect_config_error("[phantom]\nkind = toy_lens\nblur_nu = 1\nblur_window = 4\n", "t.cfg:");
  expect_config_error("[grid\nnx = 3\n", "t.cfg");
  expect_config_error("[phantom]\nkind = toy_lens\nsigma_b = 0\n", "t.cfg:3:");
}

TEST(Config, Defaults) {
  const auto cfg = parse_config("");
  EXPECT_EQ(cfg.recon.margin, 4);
  EXPECT_EQ(cfg.recon.current, 0.01);
  EXPECT_EQ(cfg.recon.eps_stop, 1e-6);
}

TEST(Experiment, ReferenceModeIsBytewiseReproducible) {
  auto cfg = parse_config(kSmall);
  const auto a = scratch("a"), b = scratch("b");
  cfg.output.dir = a.string();
  ::unsetenv("MREIT_OUTPUT_ROOT");
  run_experiment(cfg);
  cfg.output.dir = b.string();
  run_experiment(cfg);
  for (const char* f : {"raw/sigma_final.bin", "blurred/sigma_final.bin", "raw/re_series.csv", "re_series.csv",
                        "blurred/sigma_n005.bin", "raw/J_recovered.bin"}) {
    const auto pa = a / "small" / f, pb = b / "small" / f;
    ASSERT_TRUE(fs::exists(pa)) << pa;
    EXPECT_EQ(slurp(pa), slurp(pb)) << f;
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Experiment, StrayFieldDoesNotChangeIterates) {
  auto with = parse_config(kSmall);
  auto without = with;
  without.data.stray = {};
  const auto x = run_experiment(with, false), y = run_experiment(without, false);
  for (std::size_t c = 0; c < x.cases.size(); ++c)
    EXPECT_EQ(x.cases[c].result.sigma.values(), y.cases[c].result.sigma.values());
}

TEST(Experiment, ManifestRecordsDesignAndInputs) {
  auto cfg = parse_config(kSmall);
  const auto root = scratch("manifest");
  ::setenv("MREIT_OUTPUT_ROOT", root.string().c_str(), 1);
  cfg.output.dir = "ignored";
  const auto ex = run_experiment(cfg);
  ::unsetenv("MREIT_OUTPUT_ROOT");
  EXPECT_EQ(ex.directory, root / "small");
  const auto m = nlohmann::json::parse(slurp(root / "small" / "manifest.json"));
  for (const char* key : {"experiment", "config", "design", "inputs", "cases"}) EXPECT_TRUE(m.contains(key)) << key;
  for (const char* key : {"electrode_model", "current_density", "beta"}) EXPECT_TRUE(m["design"].contains(key)) << key;
  EXPECT_EQ(m["cases"].size(), 2u);
  const auto rows = read_series_csv(root / "small" / "re_series.csv");
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows.front().n, 1);
  EXPECT_TRUE(std::isfinite(rows.back().re_hat));
  const auto table = compare_table(root / "small", root / "small");
  EXPECT_NE(table.find("  5  "), std::string::npos);
  fs::remove_all(root);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
    return (dir / name).string();
  };
  EXPECT_EQ(cli("validate " + std::string(MREIT_SOURCE_DIR) + "/configs/toy.cfg"), 0);
  EXPECT_EQ(cli("validate " + write("neg.cfg", "[current]\namplitude = -1\n")), 2);
  EXPECT_EQ(cli("validate " + (dir / "missing.cfg").string()), 2);
  EXPECT_EQ(cli("run " + write("bad.cfg", "[grid]\nnx = 96\nny = 96\n[reconstruction]\nsolver_max_iterations = 1\n") +
                " --output-root " + dir.string()),
            3);
  EXPECT_EQ(cli("run " + write("ok.cfg", kSmall) + " --output-root " + dir.string()), 0);
  EXPECT_TRUE(fs::exists(dir / "small" / "manifest.json"));
  EXPECT_EQ(cli("compare " + (dir / "small").string() + " " + (dir / "small").string()), 0);
  EXPECT_EQ(cli("compare " + (dir / "small").string() + " " + (dir / "nowhere").string()), 2);
  EXPECT_NE(cli("frobnicate"), 0);
  fs::remove_all(dir);
}
