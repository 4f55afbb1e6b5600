#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "otd/experiment.hpp"

using namespace otd;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

PhaseTransitionConfig small_config() {
  PhaseTransitionConfig cfg;
  cfg.n_list = {3, 4};
  cfg.r_list = {1, 2};
  cfg.trials = 2;
  cfg.methods = {Method::admm_g, Method::admm_r};
  cfg.master_seed = 9;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST(Methods, NamesRoundTrip) {
  for (Method m : {Method::admm_g, Method::admm_r, Method::sos2}) EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_THROW(parse_method("admm"), std::invalid_argument);
}

TEST(Seeds, InstanceSharedAcrossMethods) {
  EXPECT_EQ(instance_seed(1, 4, 2, 0), instance_seed(1, 4, 2, 0));
  EXPECT_NE(instance_seed(1, 4, 2, 0), instance_seed(1, 4, 2, 1));
  EXPECT_NE(instance_seed(1, 4, 2, 0), instance_seed(2, 4, 2, 0));
  EXPECT_NE(trial_seed(1, Method::admm_g, 4, 2, 0), trial_seed(1, Method::admm_r, 4, 2, 0));
  const PhaseTransitionConfig cfg = small_config();
  const TrialRecord g = run_trial(cfg, Method::admm_g, 3, 2, 1);
  const TrialRecord r = run_trial(cfg, Method::admm_r, 3, 2, 1);
  EXPECT_EQ(g.instance_seed, r.instance_seed);
}

TEST(Config, Validation) {
  PhaseTransitionConfig cfg = small_config();
  EXPECT_NO_THROW(cfg.validate());
  cfg.trials = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.factor_tol = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.methods = {Method::sos2};
  cfg.n_list = {9};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.allow_large_sos = true;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(PhaseTransition, RankOneAlwaysSucceeds) {
  PhaseTransitionConfig cfg;
  cfg.n_list = {10};
  cfg.r_list = {1};
  cfg.trials = 5;
  cfg.methods = {Method::admm_r};
  cfg.master_seed = 3;
  const GridResult g = run_phase_transition(cfg);
  ASSERT_EQ(g.cells.size(), 1u);
  EXPECT_EQ(g.cells[0].successes, 5);
  EXPECT_EQ(g.cells[0].rate, 1.0);
  for (const TrialRecord& rec : g.cells[0].records) {
    EXPECT_LT(rec.error, 1e-3);
    EXPECT_EQ(rec.seconds, 0.0);
  }
}

TEST(PhaseTransition, SosSmallCell) {
  PhaseTransitionConfig cfg;
  cfg.n_list = {2};
  cfg.r_list = {1};
  cfg.trials = 2;
  cfg.methods = {Method::sos2};
  const GridResult g = run_phase_transition(cfg);
  EXPECT_EQ(g.cells[0].rate, 1.0);
}

TEST(PhaseTransition, DeterministicAcrossThreadCounts) {
  PhaseTransitionConfig cfg = small_config();
  const std::string a = to_json(run_phase_transition(cfg)).dump();
  const std::string b = to_json(run_phase_transition(cfg)).dump();
  cfg.threads = 3;
  const std::string c = to_json(run_phase_transition(cfg)).dump();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(PhaseTransition, RateIsSuccessFraction) {
  const GridResult g = run_phase_transition(small_config());
  ASSERT_EQ(g.cells.size(), 8u);
  for (const CellResult& c : g.cells) {
    int s = 0;
    for (const TrialRecord& rec : c.records) s += rec.success;
    EXPECT_EQ(c.successes, s);
    EXPECT_EQ(c.rate, double(s) / c.trials);
    EXPECT_GE(c.rate, 0.0);
    EXPECT_LE(c.rate, 1.0);
  }
}

TEST(Csv, EmptyGridIsHeaderOnly) {
  EXPECT_EQ(to_csv(GridResult{}), std::string(kGridCsvHeader) + "\n");
  EXPECT_TRUE(parse_grid_csv(to_csv(GridResult{})).cells.empty());
}

TEST(Csv, RoundTripIsExact) {
  GridResult g;
  CellResult c;
  c.method = Method::sos2;
  c.n = 4;
  c.r = 6;
  c.trials = 3;
  c.successes = 1;
  c.rate = 1.0 / 3.0;
  c.mean_residual = 1.2345678901234567e-9;
  g.cells.push_back(c);
  c.method = Method::admm_g;
  c.successes = 3;
  c.rate = 1.0;
  g.cells.push_back(c);
  const std::string csv = to_csv(g);
  EXPECT_NE(csv.find("ADMM-G,4,6,3,3,1,"), std::string::npos);
  const GridResult back = parse_grid_csv(csv);
  ASSERT_EQ(back.cells.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.cells[i].method, g.cells[i].method);
    EXPECT_EQ(back.cells[i].rate, g.cells[i].rate);
    EXPECT_EQ(back.cells[i].mean_residual, g.cells[i].mean_residual);
    EXPECT_EQ(back.cells[i].successes, g.cells[i].successes);
  }
  EXPECT_THROW(parse_grid_csv("bad header\n"), std::invalid_argument);
  EXPECT_THROW(parse_grid_csv(std::string(kGridCsvHeader) + "\nADMM-G,1,2\n"), std::invalid_argument);
}

TEST(Outputs, FilesWritten) {
  const auto dir = std::filesystem::temp_directory_path() / "otd_experiment_test";
  std::filesystem::remove_all(dir);
  const GridResult g = run_phase_transition(small_config());
  const auto paths = emit_outputs(g, dir);
  ASSERT_EQ(paths.size(), 4u);
  EXPECT_EQ(slurp(dir / "phase_transition.csv"), to_csv(g));
  const std::string svg = slurp(dir / "heatmap_admm-g.svg");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find(">n</text>"), std::string::npos);
  EXPECT_NE(svg.find(">r</text>"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "heatmap_admm-r.svg"));
  const auto j = nlohmann::json::parse(slurp(dir / "phase_transition.json"));
  EXPECT_EQ(j.at("cells").size(), 8u);
  std::filesystem::remove_all(dir);
}
