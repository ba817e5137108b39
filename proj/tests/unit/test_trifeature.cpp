#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "infmask/io/hash.hpp"
#include "infmask/trifeature/dataset.hpp"

using namespace infmask;
using namespace infmask::trifeature;
namespace fs = std::filesystem;

namespace {

DatasetConfig small_config(std::uint64_t seed = 3) {
  DatasetConfig c = DatasetConfig::desk(seed);
  c.geometry = {24, 16};
  c.instances_per_combination = 1;
  c.train_pairs = 60;
  c.test_pairs = 30;
  return c;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("infmask_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Factors, CombinationIdRoundTrips) {
  std::set<int> seen;
  for (int id = 0; id < kNumCombinations; ++id) {
    auto f = FactorLabel::from_combination(id);
    ASSERT_TRUE(f.valid());
    EXPECT_EQ(f.combination_id(), id);
    seen.insert(f.shape * 100 + f.texture * 10 + f.color);
  }
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(Synergy, MappingIsSeededBijection) {
  auto a = SynergyMapping::from_seed(0), b = SynergyMapping::from_seed(0), c = SynergyMapping::from_seed(1);
  EXPECT_TRUE(a.valid());
  EXPECT_EQ(a.texture_to_color, b.texture_to_color);
  EXPECT_NE(a.texture_to_color, c.texture_to_color);
  int positives = 0;
  for (int t = 0; t < kNumCategories; ++t)
    for (int col = 0; col < kNumCategories; ++col) positives += synergy_label(t, col, a);
  EXPECT_EQ(positives, kNumCategories);
}

TEST(Synergy, RejectsNonBijection) {
  SynergyMapping m;
  m.texture_to_color.fill(3);
  EXPECT_FALSE(m.valid());
  EXPECT_THROW(synergy_label(0, 3, m), ParameterError);
}

TEST(Dataset, DeskCountsAndDisjointSplits) {
  auto ds = build_dataset(DatasetConfig::desk(0));
  EXPECT_EQ(ds.train_combination_ids.size(), 800u);
  EXPECT_EQ(ds.test_combination_ids.size(), 200u);
  EXPECT_EQ(ds.instances.size(), 3000u);
  EXPECT_EQ(ds.train.size(), 2000u);
  EXPECT_EQ(ds.test.size(), 800u);
  std::set<int> train(ds.train_combination_ids.begin(), ds.train_combination_ids.end());
  for (int id : ds.test_combination_ids) EXPECT_FALSE(train.count(id));
}

TEST(Dataset, PairLabelsFollowFactors) {
  auto ds = build_dataset(DatasetConfig::desk(5));
  for (const auto* pairs : {&ds.train, &ds.test}) {
    int positives = 0;
    for (const auto& p : *pairs) {
      const auto& a = ds.instances.at(static_cast<std::size_t>(p.inst1));
      const auto& b = ds.instances.at(static_cast<std::size_t>(p.inst2));
      ASSERT_EQ(a.split, p.split);
      ASSERT_EQ(b.split, p.split);
      EXPECT_NE(p.inst1, p.inst2);
      EXPECT_EQ(a.factors, p.f1);
      EXPECT_EQ(b.factors, p.f2);
      EXPECT_EQ(p.f1.shape, p.f2.shape);
      EXPECT_EQ(p.y_red, p.f1.shape);
      EXPECT_EQ(p.y_uni1, p.f1.texture);
      EXPECT_EQ(p.y_uni2, p.f2.texture);
      EXPECT_EQ(p.y_syn, ds.mapping.color_for(p.f1.texture) == p.f2.color ? 1 : 0);
      positives += p.y_syn;
    }
    EXPECT_EQ(positives, static_cast<int>(pairs->size()) / 2);
  }
}

TEST(Dataset, DeterministicInSeed) {
  EXPECT_EQ(manifest_csv(build_dataset(small_config(3))), manifest_csv(build_dataset(small_config(3))));
  EXPECT_NE(manifest_csv(build_dataset(small_config(3))), manifest_csv(build_dataset(small_config(4))));
}

TEST(Dataset, ValidatesConfig) {
  auto c = small_config();
  c.train_combinations = 0;
  EXPECT_THROW(build_dataset(c), ConfigError);
  c.train_combinations = kNumCombinations;
  EXPECT_THROW(build_dataset(c), ConfigError);
  c = small_config();
  c.geometry = {16, 24};
  EXPECT_THROW(build_dataset(c), ConfigError);
  c = small_config();
  c.test_pairs = 1;
  EXPECT_THROW(build_dataset(c), ConfigError);
}

TEST(Render, DeterministicAndInsideBox) {
  const CanvasGeometry g{64, 37};
  const FactorLabel f{2, 5, 7};
  auto a = render_instance(f, 11, g), b = render_instance(f, 11, g), c = render_instance(f, 12, g);
  EXPECT_EQ(a.image, b.image);
  EXPECT_FALSE(a.image == c.image);
  EXPECT_GT(a.shape_mask.count(), 100u);
  for (int y = 0; y < g.canvas; ++y)
    for (int x = 0; x < g.canvas; ++x) {
      const bool in_box = y >= a.pose.offset_y && y < a.pose.offset_y + g.bbox && x >= a.pose.offset_x &&
                          x < a.pose.offset_x + g.bbox;
      if (!in_box) {
        ASSERT_EQ(a.shape_mask.at(y, x), 0);
        ASSERT_EQ(a.image.at(y, x, 0), 0.0f);
      }
    }
}

TEST(Render, ForegroundUsesColourAtOnOrOffLevel) {
  const CanvasGeometry g{64, 37};
  const FactorLabel f{0, 3, 4};
  auto r = render_instance(f, 1, g);
  const auto& rgb = kColors[4];
  for (int y = 0; y < g.canvas; ++y)
    for (int x = 0; x < g.canvas; ++x) {
      if (!r.shape_mask.at(y, x)) continue;
      const float level = r.image.at(y, x, 0) / rgb[0];
      ASSERT_TRUE(std::abs(level - 1.0f) < 1e-6f || std::abs(level - kTextureOffLevel) < 1e-6f);
    }
}

TEST(Render, RejectsInvalidFactors) {
  EXPECT_THROW(render_instance({10, 0, 0}, 0, CanvasGeometry::desk()), ConfigError);
  EXPECT_THROW(render_instance({0, 0, 0}, 0, CanvasGeometry{16, 3}), ConfigError);
}

TEST(DatasetIo, WriteLoadRoundTrip) {
  auto ds = build_dataset(small_config());
  const auto dir = scratch("roundtrip");
  write_dataset(ds, dir);
  EXPECT_EQ(manifest_hash(dir), io::git_blob_hash(manifest_csv(ds)));
  auto ld = load_dataset(dir);
  EXPECT_EQ(ld.canvas(), 24);
  ASSERT_EQ(ld.train.size(), ds.train.size());
  ASSERT_EQ(ld.test.size(), ds.test.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    EXPECT_EQ(ld.train[i].pair_id, ds.train[i].pair_id);
    EXPECT_EQ(ld.train[i].y_syn, ds.train[i].y_syn);
    EXPECT_EQ(ld.train[i].f1, ds.train[i].f1);
  }
  EXPECT_EQ(ld.mapping.texture_to_color, ds.mapping.texture_to_color);
  // pixels agree with an in-memory render after 8-bit quantisation
  const auto& p = ds.train.front();
  auto img = render_record(ds.instances[static_cast<std::size_t>(p.inst1)], ds.config.geometry).image;
  quantize_u8(img);
  EXPECT_EQ(ld.images.at(static_cast<std::size_t>(ld.train.front().inst1)), img);
  fs::remove_all(dir);
}

TEST(DatasetIo, RefusesNonEmptyDirectory) {
  auto ds = build_dataset(small_config());
  const auto dir = scratch("nonempty");
  fs::create_directories(dir);
  std::ofstream(dir / "keep.txt") << "x";
  EXPECT_THROW(write_dataset(ds, dir), ConfigError);
  EXPECT_NO_THROW(write_dataset(ds, dir, true));
  EXPECT_TRUE(fs::exists(dir / "keep.txt"));
  fs::remove_all(dir);
}
