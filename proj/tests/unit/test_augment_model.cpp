#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "infmask/augment/pipeline.hpp"
#include "infmask/model/checkpoint.hpp"
#include "infmask/model/ops.hpp"
#include "infmask/oracle/oracle.hpp"

using namespace infmask;
namespace fs = std::filesystem;

namespace {

augment::MultimodalSample noise_pair(int size, std::uint64_t seed) {
  Rng rng(seed);
  augment::MultimodalSample s;
  s.modalities = {oracle::detail::noise_image(size, rng), oracle::detail::noise_image(size, rng)};
  s.labels = {{1, 2, 3}, {1, 4, 5}};
  return s;
}

std::vector<augment::MultimodalSample> noise_batch(int n, int size, std::uint64_t seed) {
  std::vector<augment::MultimodalSample> b;
  for (int i = 0; i < n; ++i) b.push_back(noise_pair(size, seed + static_cast<std::uint64_t>(i)));
  return b;
}

}  // namespace

// --- augment ---------------------------------------------------------------

TEST(AugmentOps, ParseDefaultText) {
  auto ops = augment::parse_ops("crop(0.2,1.0,0.3) flip(0.5) jitter(0.8,0.3,0.3,0.3,0.03) gray(0.2) blur(0.5,0.1,0.8)");
  ASSERT_EQ(ops.size(), 5u);
  EXPECT_EQ(ops[0].name(), "crop");
  EXPECT_DOUBLE_EQ(ops[0].scale_min, 0.2);
  EXPECT_DOUBLE_EQ(ops[2].hue, 0.03);
  EXPECT_DOUBLE_EQ(ops[4].sigma_max, 0.8);
  EXPECT_TRUE(augment::parse_ops("none").empty());
  EXPECT_TRUE(augment::parse_ops("").empty());
}

TEST(AugmentOps, ParseRejectsMalformed) {
  EXPECT_THROW(augment::parse_ops("rotate(0.5)"), ParameterError);
  EXPECT_THROW(augment::parse_ops("flip(x)"), ParameterError);
  EXPECT_THROW(augment::parse_ops("flip"), ParameterError);
  EXPECT_THROW(augment::parse_ops("crop(0.9,0.5)"), ParameterError);
  EXPECT_THROW(augment::parse_ops("gray(1.5)"), ParameterError);
}

TEST(Augment, DeterministicInSeedAndKeepsLabels) {
  const auto x = noise_pair(32, 1);
  const auto pipe = augment::AugmentationPipeline::standard(2);
  auto a = augment::augment(x, pipe, 9), b = augment::augment(x, pipe, 9), c = augment::augment(x, pipe, 10);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
  EXPECT_EQ(a.labels, x.labels);
  EXPECT_EQ(a.modalities[0]->height, 32);
  EXPECT_EQ(a.modalities[1]->width, 32);
}

TEST(Augment, IdentityPipelineIsNoOp) {
  const auto x = noise_pair(16, 2);
  EXPECT_EQ(augment::augment(x, augment::AugmentationPipeline::identity(2), 5), x);
}

TEST(Augment, MissingModalityStaysMissing) {
  auto x = augment::project(noise_pair(16, 3), 1);
  auto y = augment::augment(x, augment::AugmentationPipeline::standard(2), 4);
  EXPECT_FALSE(y.has(0));
  EXPECT_TRUE(y.has(1));
}

TEST(Augment, RejectsModalityCountMismatch) {
  EXPECT_THROW(augment::augment(noise_pair(16, 1), augment::AugmentationPipeline::standard(3), 0), ParameterError);
}

TEST(Augment, ProjectionKeepsOneSlot) {
  const auto x = noise_pair(16, 4);
  auto p = augment::project(x, 0);
  ASSERT_EQ(p.num_modalities(), 2u);
  EXPECT_TRUE(p.has(0));
  EXPECT_FALSE(p.has(1));
  EXPECT_EQ(*p.modalities[0], *x.modalities[0]);
  EXPECT_EQ(p.labels, x.labels);
  EXPECT_THROW(augment::project(x, 2), ParameterError);
}

TEST(Augment, WithoutRemovesNamedOp) {
  auto pipe = augment::AugmentationPipeline::standard(2).without(0, "crop");
  EXPECT_EQ(pipe.per_modality[0].size(), 4u);
  EXPECT_EQ(pipe.per_modality[1].size(), 5u);
  for (const auto& op : pipe.per_modality[0]) EXPECT_NE(op.name(), "crop");
}

TEST(ImageOps, FlipTwiceAndGray) {
  Rng rng(5);
  auto img = oracle::detail::noise_image(12, rng);
  auto f = img;
  augment::ops::hflip(f);
  EXPECT_FLOAT_EQ(f.at(3, 0, 1), img.at(3, 11, 1));
  augment::ops::hflip(f);
  EXPECT_EQ(f, img);
  augment::ops::grayscale(f);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) {
      EXPECT_FLOAT_EQ(f.at(y, x, 0), f.at(y, x, 1));
      EXPECT_FLOAT_EQ(f.at(y, x, 1), f.at(y, x, 2));
    }
}

TEST(ImageOps, BlurKeepsConstantImage) {
  Image img(10, 10);
  for (auto& v : img.pixels) v = 0.4f;
  augment::ops::gaussian_blur(img, 0.8);
  for (float v : img.pixels) EXPECT_NEAR(v, 0.4f, 1e-5f);
}

TEST(ImageOps, CropKeepsSizeAndRange) {
  Rng rng(6);
  auto img = oracle::detail::noise_image(20, rng);
  for (int k = 0; k < 20; ++k) {
    auto out = augment::ops::random_resized_crop(img, augment::make_crop(), rng);
    ASSERT_EQ(out.height, 20);
    ASSERT_EQ(out.width, 20);
    for (float v : out.pixels) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

// --- masking -----------------------------------------------------------------

TEST(Masking, CountsAreCeilOfRatio) {
  EXPECT_EQ(model::masked_count(0.7, 10), 7);
  EXPECT_EQ(model::masked_count(0.7, 16), 12);
  EXPECT_EQ(model::masked_count(0.5, 8), 4);
  EXPECT_EQ(model::masked_count(0.0, 16), 0);
  Rng rng(1);
  for (int k = 0; k < 50; ++k) {
    auto keep = model::sample_survivors(16, 0.3, rng);
    ASSERT_EQ(keep.size(), 11u);
    EXPECT_TRUE(std::is_sorted(keep.begin(), keep.end()));
    EXPECT_EQ(std::set<int>(keep.begin(), keep.end()).size(), keep.size());
    EXPECT_GE(keep.front(), 0);
    EXPECT_LT(keep.back(), 16);
  }
}

TEST(Masking, SpecRejectsDegenerateSettings) {
  model::MaskSpec s;
  s.ratio = 1.0;
  EXPECT_THROW(s.validate({16, 16}, 64), ParameterError);
  s.ratio = 0.95;  // ceil(15.2) = 16 of 16
  EXPECT_THROW(s.validate({16, 16}, 64), ParameterError);
  s.ratio = 0.9;
  EXPECT_NO_THROW(s.validate({16, 16}, 64));
  s.views = 0;
  EXPECT_THROW(s.validate({16, 16}, 64), ParameterError);
  EXPECT_EQ(model::parse_mask_mode("channel"), model::MaskMode::Channel);
  EXPECT_THROW(model::parse_mask_mode("pixel"), ParameterError);
}

// --- model -----------------------------------------------------------------

TEST(Model, TokenCountFromStrides) {
  model::ModelConfig c;
  EXPECT_EQ(c.tokens_per_modality(), 16);  // 64 px, four stride-2 stages
  c.image_size = 224;
  EXPECT_EQ(c.tokens_per_modality(), 196);
  c.heads = 7;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, FusedEmbeddingsAreUnitNorm) {
  model::InfMaskingModel m(oracle::detail::tiny_model());
  auto tokens = model::encode(m, noise_batch(4, 16, 10));
  auto z = model::fuse(m, tokens);
  ASSERT_EQ(z.z.rows(), 4);
  ASSERT_EQ(z.z.cols(), 16);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(z.z.row(i).norm(), 1.0, 1e-5);
}

TEST(Model, ProjectedSampleGivesDifferentEmbedding) {
  model::InfMaskingModel m(oracle::detail::tiny_model());
  auto batch = noise_batch(3, 16, 20);
  std::vector<augment::MultimodalSample> proj;
  for (const auto& s : batch) proj.push_back(augment::project(s, 0));
  auto full = model::fuse(m, model::encode(m, batch));
  auto uni = model::fuse(m, model::encode(m, proj));
  EXPECT_GT((full.z - uni.z).norm(), 1e-3);
}

TEST(Model, MaskedViewsDeterministicInSeed) {
  model::InfMaskingModel m(oracle::detail::tiny_model());
  auto tokens = model::encode(m, noise_batch(3, 16, 30));
  model::MaskSpec spec;
  spec.ratio = 0.5;
  spec.views = 3;
  auto a = model::mask_and_fuse(m, tokens, spec, 7), b = model::mask_and_fuse(m, tokens, spec, 7);
  auto c = model::mask_and_fuse(m, tokens, spec, 8);
  ASSERT_EQ(a.views.size(), 3u);
  for (int v = 0; v < 3; ++v) {
    EXPECT_EQ(a.views[static_cast<std::size_t>(v)].z, b.views[static_cast<std::size_t>(v)].z);
    // [view][modality][sample]: 16 tokens per modality (4x4 map), 8 survive
    EXPECT_EQ(a.survivors[static_cast<std::size_t>(v)][0][0].size(), 8u);
  }
  EXPECT_NE(a.views[0].z, c.views[0].z);
  EXPECT_EQ(a.unmasked.z, model::fuse(m, tokens).z);
}

TEST(Model, InitSeedControlsWeights) {
  auto cfg = oracle::detail::tiny_model();
  model::InfMaskingModel a(cfg), b(cfg);
  cfg.init_seed += 1;
  model::InfMaskingModel c(cfg);
  auto batch = noise_batch(2, 16, 40);
  EXPECT_EQ(model::fuse(a, model::encode(a, batch)).z, model::fuse(b, model::encode(b, batch)).z);
  EXPECT_NE(model::fuse(a, model::encode(a, batch)).z, model::fuse(c, model::encode(c, batch)).z);
}

// --- checkpoints -------------------------------------------------------------

TEST(Checkpoint, RoundTripPreservesOutputsAndMeta) {
  model::InfMaskingModel m(oracle::detail::tiny_model());
  const auto path = fs::temp_directory_path() / "infmask_test_ckpt.bin";
  model::save_checkpoint(path, m, {{"seed", "42"}, {"epoch", "3"}});
  auto back = model::load_checkpoint(path);
  EXPECT_EQ(back.config(), m.config());
  auto batch = noise_batch(2, 16, 50);
  EXPECT_EQ(model::fuse(m, model::encode(m, batch)).z, model::fuse(back, model::encode(back, batch)).z);
  auto info = model::read_checkpoint_info(path);
  EXPECT_EQ(info.meta.at("seed"), "42");
  EXPECT_EQ(info.meta.at("epoch"), "3");
  fs::remove(path);
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  model::InfMaskingModel m(oracle::detail::tiny_model());
  const auto path = fs::temp_directory_path() / "infmask_test_ckpt_trunc.bin";
  model::save_checkpoint(path, m);
  fs::resize_file(path, fs::file_size(path) - 16);
  EXPECT_ANY_THROW(model::load_checkpoint(path));
  std::ofstream(path) << "not a checkpoint\n";
  EXPECT_ANY_THROW(model::load_checkpoint(path));
  fs::remove(path);
}
