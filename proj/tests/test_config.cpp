#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "sgdlab/config.hpp"

using namespace sgdlab;
namespace fs = std::filesystem;

namespace {

ExperimentConfig parse(const std::string& text, const std::string& path = "cfg.toml") {
  return build_config(parse_config_text(text, path));
}

std::string error_of(const std::string& text, const std::string& path = "cfg.toml") {
  try {
    parse(text, path);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

}  // namespace

TEST(Config, MinimalTomlUsesDocumentedDefaults) {
  const auto c = parse("experiment = \"stationary-depth1\"\n");
  EXPECT_EQ(c.experiment, "stationary-depth1");
  EXPECT_EQ(c.seed, 0u);
  EXPECT_EQ(c.output, "out");
  EXPECT_EQ(c.dataset.kind, "linear");
  EXPECT_EQ(c.dataset.k, 1.0);
  EXPECT_EQ(c.dataset.sigma, 1.0);
  EXPECT_EQ(c.dataset.n, 10000);
  EXPECT_EQ(c.model.depth, 1);
  EXPECT_EQ(c.stepper.cfg.eta, 1e-3);
  EXPECT_EQ(c.stepper.cfg.S, 1);
  EXPECT_EQ(c.stepper.cfg.T, 1e-3);
  EXPECT_EQ(c.stepper.cfg.steps, 100000);
  EXPECT_EQ(c.stepper.trajectories, 1);
  EXPECT_EQ(c.density.points, 1000);
  EXPECT_FALSE(c.density.present);
  EXPECT_EQ(c.density.spec.T, c.stepper.cfg.T);
  EXPECT_EQ(c.compare.burn_in, 0.2);
}

TEST(Config, JsonMatchesToml) {
  const auto a = parse(
      "experiment = \"stationary-depth0\"\nseed = 7\n[stepper]\neta = 0.05\nS = 5\nsteps = 200\n"
      "[density]\ncase = \"Depth0\"\n");
  const auto b = parse(
      R"({"experiment": "stationary-depth0", "seed": 7,
          "stepper": {"eta": 0.05, "S": 5, "steps": 200}, "density": {"case": "Depth0"}})",
      "cfg.json");
  EXPECT_EQ(a.resolved, b.resolved);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_DOUBLE_EQ(a.stepper.cfg.T, 0.01);
}

TEST(Config, UnknownKeyNamesNearestMatch) {
  const std::string e = error_of("experiment = \"balance-linear\"\n[stepper]\nlearning_rte = 0.1\n");
  EXPECT_TRUE(contains(e, "unknown key 'stepper.learning_rte'")) << e;
  EXPECT_TRUE(contains(e, "nearest match: 'stepper.")) << e;
  EXPECT_TRUE(contains(e, "cfg.toml:3")) << e;
  const std::string f = error_of("experiment = \"balance-linear\"\n[stepper]\nstep = 10\n");
  EXPECT_TRUE(contains(f, "nearest match: 'stepper.steps'")) << f;
}

TEST(Config, UnknownSectionSuggestsName) {
  const std::string e = error_of("experiment = \"balance-linear\"\n[steper]\neta = 0.1\n");
  EXPECT_TRUE(contains(e, "unknown section 'steper'")) << e;
  EXPECT_TRUE(contains(e, "did you mean 'stepper'")) << e;
}

TEST(Config, MissingAndUnknownExperiment) {
  EXPECT_TRUE(contains(error_of("seed = 1\n"), "missing required field 'experiment'"));
  const std::string e = error_of("experiment = \"stationary-depth2\"\n");
  EXPECT_TRUE(contains(e, "unknown experiment 'stationary-depth2'")) << e;
  EXPECT_TRUE(contains(e, "nearest match: 'stationary-depth")) << e;
}

TEST(Config, TemperatureMustEqualEtaOverS) {
  const std::string e = error_of("experiment = \"balance-linear\"\n[stepper]\neta = 0.01\nS = 2\nT = 0.01\n");
  EXPECT_TRUE(contains(e, "T must equal eta/S")) << e;
  EXPECT_TRUE(contains(e, "cfg.toml:5")) << e;
  EXPECT_NO_THROW(parse("experiment = \"balance-linear\"\n[stepper]\neta = 0.01\nS = 2\nT = 0.005\n"));
}

TEST(Config, TypeMismatchIsLinePrecise) {
  const std::string e = error_of("experiment = \"balance-linear\"\n\n[stepper]\nsteps = \"many\"\n");
  EXPECT_TRUE(contains(e, "cfg.toml:4")) << e;
  EXPECT_TRUE(contains(e, "must be an integer")) << e;
  EXPECT_TRUE(contains(error_of("experiment = \"balance-linear\"\n[stepper]\neta = true\n"), "must be a number"));
}

TEST(Config, SyntaxErrorsCarryLines) {
  EXPECT_TRUE(contains(error_of("experiment = \"balance-linear\"\n[stepper\n"), "cfg.toml:2"));
  const std::string e = error_of("{\n\"experiment\": \"balance-linear\",\n\"seed\": ,\n}", "cfg.json");
  EXPECT_TRUE(contains(e, "cfg.json:3")) << e;
  EXPECT_TRUE(contains(e, "JSON parse error")) << e;
}

TEST(Config, RangeChecks) {
  const std::string head = "experiment = \"stationary-depth1\"\n";
  EXPECT_TRUE(contains(error_of(head + "[stepper]\nS = 0\n"), "stepper.S"));
  EXPECT_TRUE(contains(error_of(head + "[stepper]\neta = -1.0\n"), "stepper.eta"));
  EXPECT_TRUE(contains(error_of(head + "[density]\nz = 1.5\n"), "density.z"));
  EXPECT_TRUE(contains(error_of(head + "[density]\nbranch = 0\n"), "density.branch"));
  EXPECT_TRUE(contains(error_of(head + "[dataset]\nkind = \"csv\"\n"), "dataset.path"));
  EXPECT_TRUE(contains(error_of(head + "[model]\nwidth = 2\ndepth = 1\ninit = [1.0, 2.0]\n"), "model.init"));
  const std::string mode = error_of(head + "[stepper]\nmode = \"Adam\"\n");
  EXPECT_TRUE(contains(mode, "cfg.toml:3: unknown mode 'Adam'")) << mode;
}

TEST(Config, HashIsDeterministicAndTracksSeed) {
  const std::string text = "experiment = \"noether-contrast\"\nseed = 3\n";
  auto a = parse(text);
  const auto b = parse(text);
  EXPECT_EQ(a.hash(), b.hash());
  a.set_seed(4);
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.stepper.cfg.seed, 4u);
  EXPECT_EQ(a.hash(), parse("experiment = \"noether-contrast\"\nseed = 4\n").hash());
}

TEST(Config, OutputAndWorkersDoNotAffectHash) {
  const auto a = parse("experiment = \"regimes-grid\"\noutput = \"a\"\nworkers = 2\n");
  const auto b = parse("experiment = \"regimes-grid\"\noutput = \"b\"\nworkers = 8\n");
  EXPECT_EQ(a.hash(), b.hash());
}

TEST(Config, ExplainListsEveryKeyWithDefault) {
  const std::string text = explain_config();
  for (const auto& sec : config_schema())
    for (const auto& k : sec.keys) EXPECT_TRUE(contains(text, "  " + k.name + " (")) << k.name;
  for (const auto& e : experiment_names()) EXPECT_TRUE(contains(text, e)) << e;
  EXPECT_TRUE(contains(text, "default eta/S"));
}

TEST(Config, NearestMatch) {
  EXPECT_EQ(edit_distance("kitten", "sitting"), 3u);
  EXPECT_EQ(edit_distance("", "abc"), 3u);
  EXPECT_EQ(nearest_match("gama", {"gamma", "eta", "steps"}), "gamma");
}

TEST(Config, ExampleConfigsValidate) {
  std::size_t n = 0;
  for (const auto& f : std::filesystem::directory_iterator(fs::path(SGDLAB_SOURCE_DIR) / "examples_cfg")) {
    if (f.path().extension() != ".toml") continue;
    ++n;
    EXPECT_NO_THROW(validate_config(f.path().string())) << f.path();
  }
  EXPECT_GE(n, experiment_names().size());
}
