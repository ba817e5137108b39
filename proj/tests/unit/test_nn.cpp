#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "infmask/model/model.hpp"
#include "infmask/nn/adamw.hpp"
#include "infmask/nn/attention.hpp"
#include "infmask/nn/layers.hpp"

using namespace infmask;
using gradcheck::max_rel_error;
using gradcheck::weighted_sum;

namespace {

constexpr double kTol = 2e-2;

MatrixF random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, float scale = 1.0f) {
  std::normal_distribution<float> d(0.0f, scale);
  MatrixF m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

}  // namespace

TEST(Linear, GradientsMatchFiniteDifferences) {
  Rng rng(1);
  nn::Linear lin("l", 5, 4, rng);
  MatrixF x = random_matrix(3, 5, rng);
  MatrixF r = random_matrix(3, 4, rng);
  nn::Linear::Cache c;
  lin.forward(x, &c);
  MatrixF dx = lin.backward(c, r);
  auto f = [&] { return weighted_sum(lin.forward(x, nullptr), r); };
  EXPECT_LT(max_rel_error(x, dx, f), kTol);
  MatrixF gw = lin.weight.grad;
  EXPECT_LT(max_rel_error(lin.weight.value, gw, f), kTol);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(2);
  nn::Conv2d conv("c", 3, 4, 3, 2, 1, rng);
  const int n = 2, h = 7, w = 6;
  MatrixF x = random_matrix(n * h * w, 3, rng);
  const int ho = conv.out_size(h), wo = conv.out_size(w);
  MatrixF r = random_matrix(n * ho * wo, 4, rng);
  nn::Conv2d::Cache c;
  conv.forward(x, n, h, w, &c);
  MatrixF dx = conv.backward(c, r);
  auto f = [&] { return weighted_sum(conv.forward(x, n, h, w, nullptr), r); };
  EXPECT_LT(max_rel_error(x, dx, f), kTol);
  MatrixF gw = conv.weight.grad, gb = conv.bias.grad;
  EXPECT_LT(max_rel_error(conv.weight.value, gw, f), kTol);
  EXPECT_LT(max_rel_error(conv.bias.value, gb, f), kTol);
}

TEST(Conv2d, MatchesDirectConvolution) {
  Rng rng(3);
  nn::Conv2d conv("c", 2, 3, 3, 2, 1, rng);
  const int h = 5, w = 5;
  MatrixF x = random_matrix(h * w, 2, rng);
  MatrixF y = conv.forward(x, 1, h, w, nullptr);
  const int ho = conv.out_size(h);
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < ho; ++ox)
      for (int co = 0; co < 3; ++co) {
        double acc = conv.bias.value(0, co);
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            for (int ci = 0; ci < 2; ++ci) acc += x(iy * w + ix, ci) * conv.weight.value((ky * 3 + kx) * 2 + ci, co);
          }
        EXPECT_NEAR(y(oy * ho + ox, co), acc, 1e-5);
      }
}

TEST(LayerNorm, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  nn::LayerNorm ln("ln", 6);
  ln.gamma.value = random_matrix(1, 6, rng);
  ln.beta.value = random_matrix(1, 6, rng);
  MatrixF x = random_matrix(4, 6, rng);
  MatrixF r = random_matrix(4, 6, rng);
  nn::LayerNorm::Cache c;
  ln.forward(x, &c);
  MatrixF dx = ln.backward(c, r);
  auto f = [&] { return weighted_sum(ln.forward(x, nullptr), r); };
  EXPECT_LT(max_rel_error(x, dx, f), kTol);
  MatrixF gg = ln.gamma.grad;
  EXPECT_LT(max_rel_error(ln.gamma.value, gg, f), kTol);
}

TEST(Activations, GeluAndL2NormGradients) {
  Rng rng(5);
  MatrixF x = random_matrix(3, 5, rng);
  MatrixF r = random_matrix(3, 5, rng);
  MatrixF dg = nn::gelu_backward(x, r);
  EXPECT_LT(max_rel_error(x, dg, [&] { return weighted_sum(nn::gelu(x), r); }), kTol);
  nn::L2NormCache c;
  nn::l2_normalize(x, &c);
  MatrixF dn = nn::l2_normalize_backward(c, r);
  EXPECT_LT(max_rel_error(x, dn, [&] { return weighted_sum(nn::l2_normalize(x, nullptr), r); }), kTol);
}

class AttentionGrad : public ::testing::TestWithParam<std::tuple<bool, bool>> {};

TEST_P(AttentionGrad, GradientsMatchFiniteDifferences) {
  const auto [last_only, padded] = GetParam();
  Rng rng(6);
  nn::MultiHeadAttention att("a", 8, 2, rng);
  const int b = 2, l = 5;
  MatrixF x = random_matrix(b * l, 8, rng);
  std::vector<std::uint8_t> pad(static_cast<std::size_t>(b * l), 0);
  pad[1] = pad[7] = pad[8] = 1;
  const auto* kp = padded ? &pad : nullptr;
  MatrixF r = random_matrix(last_only ? b : b * l, 8, rng);
  nn::MultiHeadAttention::Cache c;
  att.forward(x, b, l, last_only, kp, &c);
  MatrixF dx = att.backward(c, r);
  auto f = [&] { return weighted_sum(att.forward(x, b, l, last_only, kp, nullptr), r); };
  EXPECT_LT(max_rel_error(x, dx, f), kTol);
  MatrixF gq = att.q.weight.grad, gk = att.k.weight.grad, gv = att.v.weight.grad;
  EXPECT_LT(max_rel_error(att.q.weight.value, gq, f), kTol);
  EXPECT_LT(max_rel_error(att.k.weight.value, gk, f), kTol);
  EXPECT_LT(max_rel_error(att.v.weight.value, gv, f), kTol);
}

INSTANTIATE_TEST_SUITE_P(Modes, AttentionGrad,
                         ::testing::Combine(::testing::Bool(), ::testing::Bool()));

TEST(Attention, PaddedKeysGetZeroWeight) {
  Rng rng(7);
  nn::MultiHeadAttention att("a", 8, 2, rng);
  MatrixF x = random_matrix(4, 8, rng);
  std::vector<std::uint8_t> pad = {0, 1, 0, 0};
  nn::MultiHeadAttention::Cache c;
  att.forward(x, 1, 4, false, &pad, &c);
  for (Eigen::Index i = 0; i < c.P.rows(); ++i) EXPECT_EQ(c.P(i, 1), 0.0f);
  std::vector<std::uint8_t> all(4, 1);
  EXPECT_THROW(att.forward(x, 1, 4, false, &all, nullptr), ParameterError);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  nn::Param p("w", 1, 2);
  p.value << 1.0f, -2.0f;
  p.grad << 0.5f, -3.0f;
  nn::AdamW opt({&p}, nn::AdamWOptions{0.1, 0.9, 0.999, 1e-8, 0.0});
  opt.step();
  // bias-corrected first step is lr * sign(g)
  EXPECT_NEAR(p.value(0, 0), 0.9f, 1e-5);
  EXPECT_NEAR(p.value(0, 1), -1.9f, 1e-5);
}

TEST(AdamW, DecayOnlyTouchesFlaggedParams) {
  nn::Param w("w", 1, 1), b("b", 1, 1, false);
  w.value(0, 0) = b.value(0, 0) = 1.0f;
  nn::AdamW opt({&w, &b}, nn::AdamWOptions{0.5, 0.9, 0.999, 1e-8, 0.1});
  opt.step();  // zero gradients: only decay acts
  EXPECT_NEAR(w.value(0, 0), 1.0f - 0.5f * 0.1f, 1e-6);
  EXPECT_EQ(b.value(0, 0), 1.0f);
}

// ---------------------------------------------------------------------------
// Whole-model gradients through the gather/fuse path.

namespace {

model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.image_size = 16;
  c.conv_channels = {4, 8};
  c.token_dim = 8;
  c.heads = 2;
  c.head_hidden = 24;
  c.embed_dim = 16;
  c.init_seed = 11;
  return c;
}

}  // namespace

class FuseGrad : public ::testing::TestWithParam<int> {};

TEST_P(FuseGrad, TokenAndParameterGradients) {
  const int mode = GetParam();  // 0 full, 1 token mask, 2 channel mask, 3 unimodal
  model::InfMaskingModel m(tiny_config());
  const int t = m.tokens_per_modality();
  Rng rng(8);
  // At its 0.02 init scale the CLS row sits inside LayerNorm's steep region,
  // where float finite differences are useless.
  for (auto* p : m.parameters())
    if (p->name == "fusion.cls") p->value = random_matrix(1, 8, rng);
  const int b = 3;
  MatrixF t0 = random_matrix(b * t, 8, rng), t1 = random_matrix(b * t, 8, rng);
  std::vector<std::vector<int>> imgs = {{0, 1, 2}, {2, 0, 1}};
  if (mode == 3) imgs[0].clear();
  model::GatherPlan plan;
  if (mode == 1 || mode == 2) {
    model::MaskSpec spec{0.5, 1, mode == 1 ? model::MaskMode::Token : model::MaskMode::Channel};
    plan = model::masked_plan(imgs, m.token_counts(), 8, spec, rng).plan;
  } else {
    plan = model::full_plan(imgs, m.token_counts());
  }
  MatrixF r = random_matrix(b, 16, rng);
  model::InfMaskingModel::FuseCache cache;
  m.fuse({&t0, &t1}, plan, &cache);
  std::vector<MatrixF> dt = {MatrixF::Zero(t0.rows(), 8), MatrixF::Zero(t1.rows(), 8)};
  auto params = m.parameters();
  nn::zero_grads(params);
  m.fuse_backward(cache, r, dt);
  auto f = [&] { return weighted_sum(m.fuse({&t0, &t1}, plan, nullptr), r); };
  EXPECT_LT(max_rel_error(t0, dt[0], f), kTol);
  EXPECT_LT(max_rel_error(t1, dt[1], f), kTol);
  for (auto* p : params) {
    if (p->name.rfind("enc", 0) == 0) continue;
    MatrixF g = p->grad;
    EXPECT_LT(max_rel_error(p->value, g, f, 1e-2f, 20), kTol) << p->name;
  }
}

INSTANTIATE_TEST_SUITE_P(Plans, FuseGrad, ::testing::Values(0, 1, 2, 3));

TEST(ConvEncoder, ParameterGradients) {
  model::InfMaskingModel m(tiny_config());
  Rng rng(9);
  const int b = 2;
  MatrixF x = random_matrix(b * 16 * 16, 3, rng);
  MatrixF r = random_matrix(b * m.tokens_per_modality(), 8, rng);
  model::ConvEncoder::Cache c;
  m.encode(0, x, b, &c);
  auto params = m.parameters();
  nn::zero_grads(params);
  m.encode_backward(0, c, r);
  auto f = [&] { return weighted_sum(m.encode(0, x, b, nullptr), r); };
  for (auto* p : params) {
    if (p->name.rfind("enc0", 0) != 0) continue;
    MatrixF g = p->grad;
    EXPECT_LT(max_rel_error(p->value, g, f, 1e-2f, 20), kTol) << p->name;
  }
}
