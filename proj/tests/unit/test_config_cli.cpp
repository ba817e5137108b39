#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "infmask/cli/commands.hpp"
#include "infmask/config/config.hpp"
#include "infmask/probe/ablation.hpp"

using namespace infmask;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(INFMASK_SOURCE_DIR) / "configs";

train::SeedsResult fake_result(double synergy) {
  train::SeedsResult r;
  r.scores = {{1, "synergy", synergy}, {2, "synergy", synergy + 0.02}, {1, "redundancy", 0.9}, {2, "redundancy", 0.9}};
  r.summary = train::aggregate(r.scores);
  return r;
}

}  // namespace

// --- config -----------------------------------------------------------------

TEST(Seeds, RangesAndLists) {
  EXPECT_EQ(config::parse_seeds("42..46"), (std::vector<std::uint64_t>{42, 43, 44, 45, 46}));
  EXPECT_EQ(config::parse_seeds("7,3"), (std::vector<std::uint64_t>{7, 3}));
  EXPECT_EQ(config::format_seeds({1, 2}), "1,2");
  EXPECT_THROW(config::parse_seeds("46..42"), ConfigError);
  EXPECT_THROW(config::parse_seeds("a"), ConfigError);
  EXPECT_THROW(config::parse_seeds("1,2x"), ConfigError);
  EXPECT_THROW(config::parse_seeds(""), ConfigError);
}

TEST(Config, ShippedFilesLoadAndValidate) {
  auto desk = config::load_config(kConfigs / "trifeature.cfg");
  EXPECT_NO_THROW(desk.validate());
  EXPECT_EQ(desk.data.geometry.canvas, 64);
  EXPECT_EQ(desk.train.model.tokens_per_modality(), 16);
  EXPECT_EQ(desk.train.seeds.size(), 5u);
  auto ref = config::load_config(kConfigs / "reference.cfg");
  EXPECT_NO_THROW(ref.validate());
  EXPECT_EQ(ref.data.geometry.canvas, 224);
  EXPECT_EQ(ref.data.train_pairs, 10000);
}

TEST(Config, ScaleAppliesBeforeExplicitKeys) {
  // explicit override listed before the scale preset still wins
  auto c = config::parse_config("[data]\ntrain_pairs = 123\nscale = reference\nseed = 9\n");
  EXPECT_EQ(c.data.train_pairs, 123);
  EXPECT_EQ(c.data.test_pairs, 4096);
  EXPECT_EQ(c.data.seed, 9u);
  EXPECT_EQ(c.train.model.image_size, 224);
}

TEST(Config, UnknownKeysAndBadValuesAreNamed) {
  try {
    config::parse_config("[loss]\nfoo = 1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("loss.foo"), std::string::npos);
  }
  try {
    config::parse_config("[train]\nlr = fast\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.lr"), std::string::npos);
  }
  EXPECT_THROW(config::parse_config("[loss]\nestimator = exact\n"), ConfigError);
  EXPECT_THROW(config::parse_config("[train\nlr = 1\n"), ConfigError);
  EXPECT_THROW(config::load_config("/nonexistent/x.cfg"), ConfigError);
}

TEST(Config, IniRoundTrip) {
  auto c = config::load_config(kConfigs / "trifeature.cfg");
  config::set_key(c, "loss.estimator", "gaussian");
  config::set_key(c, "train.schedule", "cosine");
  config::set_key(c, "augment.modality2", "none");
  const auto text = config::to_ini(c);
  EXPECT_EQ(config::to_ini(config::parse_config(text)), text);
  auto back = config::parse_config(text);
  EXPECT_EQ(back.train.loss.estimator, losses::Estimator::GaussianBound);
  EXPECT_TRUE(back.train.augmentation.per_modality[1].empty());
}

TEST(Config, EveryKnownKeyIsSettable) {
  const auto keys = config::known_keys();
  EXPECT_GT(keys.size(), 40u);
  for (const auto& k : {"loss.tau", "loss.mask_views", "train.seeds", "probe.features", "data.scale"})
    EXPECT_NE(std::find(keys.begin(), keys.end(), k), keys.end()) << k;
}

TEST(Config, TrainingHashTracksResultsOnly) {
  auto c = config::load_config(kConfigs / "trifeature.cfg");
  const auto h = config::training_hash(c, 42);
  auto d = c;
  d.run_id = "other";
  d.output_dir = "/elsewhere";
  d.train.seeds = {1};
  EXPECT_EQ(config::training_hash(d, 42), h);
  EXPECT_NE(config::training_hash(c, 43), h);
  d.train.lr *= 2;
  EXPECT_NE(config::training_hash(d, 42), h);
  EXPECT_EQ(h.size(), 40u);
}

TEST(Config, CanvasMustMatchModel) {
  // data.canvas carries over to the model unless image_size says otherwise
  auto c = config::parse_config("[data]\ncanvas = 48\n");
  EXPECT_EQ(c.train.model.image_size, 48);
  EXPECT_NO_THROW(c.validate());
  c = config::parse_config("[data]\ncanvas = 48\n[model]\nimage_size = 64\n");
  EXPECT_THROW(c.validate(), ConfigError);
}

// --- ablation ---------------------------------------------------------------

TEST(Ablation, AxisValues) {
  const train::TrainConfig base;
  EXPECT_EQ(probe::apply_axis_value(base, probe::AblationAxis::Views, "10").mask.views, 10);
  EXPECT_DOUBLE_EQ(probe::apply_axis_value(base, probe::AblationAxis::Ratio, "0.3").mask.ratio, 0.3);
  auto w = probe::apply_axis_value(base, probe::AblationAxis::Weights, "0:1:1");
  EXPECT_EQ(w.loss.lambda_mask, 0.0);
  EXPECT_EQ(w.loss.lambda_cross, 1.0);
  EXPECT_THROW(probe::apply_axis_value(base, probe::AblationAxis::Views, "6x"), ParameterError);
  EXPECT_THROW(probe::apply_axis_value(base, probe::AblationAxis::Weights, "1:1"), ParameterError);
  EXPECT_THROW(probe::apply_axis_value(base, probe::AblationAxis::Ratio, "1.0"), ConfigError);
  EXPECT_THROW(probe::apply_axis_value(base, probe::AblationAxis::Weights, "0:0:0"), ConfigError);
  EXPECT_THROW(probe::parse_axis("lr"), ParameterError);
}

TEST(Ablation, GridValidatesBeforeRunning) {
  int calls = 0;
  probe::SeedsRunner run = [&](const train::TrainConfig&, const std::string&, const fs::path&) {
    ++calls;
    return fake_result(0.5);
  };
  EXPECT_ANY_THROW(probe::ablation_grid(probe::AblationAxis::Views, {"1", "0"}, {}, run));
  EXPECT_EQ(calls, 0);
  EXPECT_THROW(probe::ablation_grid(probe::AblationAxis::Views, {}, {}, run), ParameterError);
}

TEST(Ablation, TablesAndCurves) {
  std::vector<int> seen;
  probe::SeedsRunner run = [&](const train::TrainConfig& c, const std::string&, const fs::path&) {
    seen.push_back(c.mask.views);
    return fake_result(0.5 + 0.01 * c.mask.views);
  };
  auto points = probe::ablation_grid(probe::AblationAxis::Views, {"1", "6"}, {}, run);
  EXPECT_EQ(seen, (std::vector<int>{1, 6}));
  const auto res = probe::results_csv(points, probe::AblationAxis::Views);
  EXPECT_EQ(res.rfind("model,task,seed,accuracy\n", 0), 0u);
  EXPECT_NE(res.find("views=6,synergy,2,0.58"), std::string::npos);
  const auto curve = probe::curve_csv(points, "synergy");
  EXPECT_EQ(curve.substr(0, curve.find('\n')), "axis_value,mean,std");
  EXPECT_NE(curve.find("\n1,0.52,"), std::string::npos);
  const auto dir = fs::temp_directory_path() / "infmask_test_ablation";
  fs::remove_all(dir);
  probe::write_ablation(points, probe::AblationAxis::Views, dir);
  EXPECT_TRUE(fs::exists(dir / "results.csv"));
  EXPECT_TRUE(fs::exists(dir / "curve_synergy.csv"));
  EXPECT_TRUE(fs::exists(dir / "curve_uniqueness_2.csv"));
  fs::remove_all(dir);
}

// --- commands -----------------------------------------------------------------

TEST(Commands, ResolveAppliesOverrides) {
  cli::CommandOptions o;
  o.config = kConfigs / "trifeature.cfg";
  o.seeds = std::vector<std::uint64_t>{7};
  o.views = 10;
  o.ratio = 0.3;
  o.estimator = "gaussian";
  o.out = "/tmp/x";
  auto c = cli::resolve_config(o);
  EXPECT_EQ(c.train.seeds, (std::vector<std::uint64_t>{7}));
  EXPECT_EQ(c.train.mask.views, 10);
  EXPECT_DOUBLE_EQ(c.train.mask.ratio, 0.3);
  EXPECT_EQ(c.train.loss.estimator, losses::Estimator::GaussianBound);
  EXPECT_EQ(c.output_dir, fs::path("/tmp/x"));
  o.views = 1;  // gaussian estimator needs two views
  EXPECT_THROW(cli::resolve_config(o), ConfigError);
}

TEST(Commands, PrepareDirNeverDeletes) {
  const auto dir = fs::temp_directory_path() / "infmask_test_prepare";
  fs::remove_all(dir);
  EXPECT_NO_THROW(cli::prepare_dir(dir, false));
  std::ofstream(dir / "keep") << "1";
  EXPECT_THROW(cli::prepare_dir(dir, false), ConfigError);
  EXPECT_NO_THROW(cli::prepare_dir(dir, true));
  EXPECT_TRUE(fs::exists(dir / "keep"));
  fs::remove_all(dir);
}

TEST(Commands, ThresholdsBySetting) {
  train::TrainConfig full;
  EXPECT_EQ(cli::thresholds_for(full).size(), 3u);
  train::TrainConfig cross;
  cross.loss.lambda_mask = cross.loss.lambda_uni = 0.0;
  ASSERT_EQ(cli::thresholds_for(cross).size(), 1u);
  EXPECT_FALSE(cli::thresholds_for(cross)[0].at_least);
  train::TrainConfig comm;
  comm.loss.lambda_mask = 0.0;
  EXPECT_TRUE(cli::thresholds_for(comm).empty());
}

TEST(Commands, SummaryMarksPassAndFail) {
  auto agg = fake_result(0.70).summary;  // synergy 0.71, redundancy 0.90
  const auto text = cli::summary_text("t", agg, cli::thresholds_for(train::TrainConfig{}));
  EXPECT_NE(text.find(">= 0.60  got 0.7100  PASS"), std::string::npos) << text;
  EXPECT_NE(text.find(">= 0.95  got 0.9000  FAIL"), std::string::npos) << text;
  EXPECT_NE(text.find("got nan  FAIL"), std::string::npos) << text;  // task missing from the results
}

TEST(Commands, QuickVerifyPassesAndWritesFiles) {
  cli::CommandOptions o;
  o.quick = true;
  o.out = fs::temp_directory_path() / "infmask_test_verify";
  fs::remove_all(*o.out);
  testing::internal::CaptureStdout();
  const int rc = cli::cmd_verify(o);
  const auto out = testing::internal::GetCapturedStdout();
  EXPECT_EQ(rc, 0) << out;
  EXPECT_TRUE(fs::exists(*o.out / "verify.csv"));
  EXPECT_NE(out.find("checks passed"), std::string::npos);
  fs::remove_all(*o.out);
}
