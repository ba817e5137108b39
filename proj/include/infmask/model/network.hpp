#pragma once

// Modality encoders, the CLS fusion transformer and the projection head.
// Layers are plain structs with explicit backward passes (see nn/layers.hpp).

#include <optional>
#include <string>
#include <vector>

#include "infmask/core/image.hpp"
#include "infmask/core/rng.hpp"
#include "infmask/core/types.hpp"
#include "infmask/model/config.hpp"
#include "infmask/nn/attention.hpp"
#include "infmask/nn/layers.hpp"

namespace infmask::model {

// Stacks images into an (N*H*W) x 3 NHWC matrix, rescaled to [-1, 1].
inline MatrixF image_batch(const std::vector<const Image*>& images) {
  require_shape(!images.empty(), "empty image batch");
  const int h = images.front()->height, w = images.front()->width;
  MatrixF x(static_cast<Eigen::Index>(images.size()) * h * w, 3);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    require_shape(img.height == h && img.width == w, "images in a batch must share a size");
    for (Eigen::Index p = 0; p < static_cast<Eigen::Index>(h) * w; ++p)
      for (int c = 0; c < 3; ++c)
        x(static_cast<Eigen::Index>(n) * h * w + p, c) = 2.0f * img.pixels[static_cast<std::size_t>(p) * 3 + c] - 1.0f;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Image -> feature map -> tokens.
struct ConvEncoder {
  std::vector<nn::Conv2d> convs;
  std::vector<nn::LayerNorm> norms;  // per-pixel channel norm after each conv (empty when disabled)
  nn::Linear converter;  // latent converter: feature channels -> token width
  int image_size = 64;

  struct Cache {
    std::vector<nn::Conv2d::Cache> conv;
    std::vector<nn::LayerNorm::Cache> norm;
    std::vector<MatrixF> preact;
    nn::Linear::Cache converter;
    int batch = 0;
  };

  ConvEncoder() = default;
  ConvEncoder(const std::string& name, const ModelConfig& cfg, Rng& rng) : image_size(cfg.image_size) {
    int cin = 3;
    for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
      convs.emplace_back(name + ".conv" + std::to_string(i), cin, cfg.conv_channels[i], 3, 2, 1, rng);
      if (cfg.encoder_norm) norms.emplace_back(name + ".norm" + std::to_string(i), cfg.conv_channels[i]);
      cin = cfg.conv_channels[i];
    }
    converter = nn::Linear(name + ".converter", cin, cfg.token_dim, rng);
  }

  MatrixF forward(const MatrixF& images, int batch, Cache* cache) const {
    require_shape(images.rows() == static_cast<Eigen::Index>(batch) * image_size * image_size,
                  "encoder: batch does not match image_size");
    if (cache) {
      cache->conv.assign(convs.size(), {});
      cache->preact.assign(convs.size(), {});
      cache->norm.assign(norms.size(), {});
      cache->batch = batch;
    }
    MatrixF h = images;
    int s = image_size;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      MatrixF y = convs[i].forward(h, batch, s, s, cache ? &cache->conv[i] : nullptr);
      s = convs[i].out_size(s);
      if (!norms.empty()) y = norms[i].forward(y, cache ? &cache->norm[i] : nullptr);
      h = nn::relu(y);
      if (cache) cache->preact[i] = std::move(y);
    }
    return converter.forward(h, cache ? &cache->converter : nullptr);
  }

  void backward(const Cache& cache, const MatrixF& dtokens) {
    MatrixF g = converter.backward(cache.converter, dtokens);
    for (std::size_t i = convs.size(); i-- > 0;) {
      g = nn::relu_backward(cache.preact[i], g);
      if (!norms.empty()) g = norms[i].backward(cache.norm[i], g);
      g = convs[i].backward(cache.conv[i], g, i > 0);
    }
  }

  void collect(nn::ParamList& out) {
    for (auto& c : convs) c.collect(out);
    for (auto& n : norms) n.collect(out);
    converter.collect(out);
  }
};

// ---------------------------------------------------------------------------
// Pre-norm transformer block.
struct TransformerBlock {
  nn::LayerNorm ln1, ln2;
  nn::MultiHeadAttention attn;
  nn::Linear fc1, fc2;

  struct Cache {
    nn::LayerNorm::Cache ln1, ln2;
    nn::MultiHeadAttention::Cache attn;
    nn::Linear::Cache fc1, fc2;
    MatrixF fc1_out;
    bool last_only = false;
    int batch = 0, length = 0;
  };

  TransformerBlock() = default;
  TransformerBlock(const std::string& name, int dim, int heads, int mlp_ratio, Rng& rng)
      : ln1(name + ".ln1", dim),
        ln2(name + ".ln2", dim),
        attn(name + ".attn", dim, heads, rng),
        fc1(name + ".fc1", dim, dim * mlp_ratio, rng),
        fc2(name + ".fc2", dim * mlp_ratio, dim, rng) {}

  MatrixF forward(const MatrixF& x, int batch, int length, bool last_only,
                  const std::vector<std::uint8_t>* key_padding, Cache* cache) const {
    MatrixF a = ln1.forward(x, cache ? &cache->ln1 : nullptr);
    MatrixF h = attn.forward(a, batch, length, last_only, key_padding, cache ? &cache->attn : nullptr);
    if (last_only) {
      for (int b = 0; b < batch; ++b) h.row(b) += x.row(static_cast<Eigen::Index>(b) * length + length - 1);
    } else {
      h += x;
    }
    MatrixF m = ln2.forward(h, cache ? &cache->ln2 : nullptr);
    MatrixF f1 = fc1.forward(m, cache ? &cache->fc1 : nullptr);
    MatrixF out = h + fc2.forward(nn::gelu(f1), cache ? &cache->fc2 : nullptr);
    if (cache) {
      cache->fc1_out = std::move(f1);
      cache->last_only = last_only;
      cache->batch = batch;
      cache->length = length;
    }
    return out;
  }

  MatrixF backward(const Cache& c, const MatrixF& dout) {
    MatrixF dg = fc2.backward(c.fc2, dout);
    MatrixF dm = fc1.backward(c.fc1, nn::gelu_backward(c.fc1_out, dg));
    MatrixF dh = dout + ln2.backward(c.ln2, dm);
    MatrixF dx = ln1.backward(c.ln1, attn.backward(c.attn, dh));
    if (c.last_only) {
      for (int b = 0; b < c.batch; ++b) dx.row(static_cast<Eigen::Index>(b) * c.length + c.length - 1) += dh.row(b);
    } else {
      dx += dh;
    }
    return dx;
  }

  void collect(nn::ParamList& out) {
    ln1.collect(out);
    attn.collect(out);
    ln2.collect(out);
    fc1.collect(out);
    fc2.collect(out);
  }
};

// ---------------------------------------------------------------------------
// Sequences are [tokens of modality 0 | tokens of modality 1 | ... | CLS].
// No positional encodings: only a per-modality type embedding is added, so
// the CLS output is invariant to token order within the sequence.
struct FusionTransformer {
  nn::Param cls;         // 1 x d
  nn::Param type_embed;  // n_modalities x d
  std::vector<TransformerBlock> blocks;
  nn::LayerNorm final_ln;

  struct Cache {
    std::vector<TransformerBlock::Cache> blocks;
    nn::LayerNorm::Cache final_ln;
    std::vector<int> counts;
    int batch = 0;
  };

  FusionTransformer() = default;
  FusionTransformer(const ModelConfig& cfg, Rng& rng)
      : cls("fusion.cls", 1, cfg.token_dim, false),
        type_embed("fusion.type_embed", cfg.num_modalities, cfg.token_dim, false),
        final_ln("fusion.final_ln", cfg.token_dim) {
    nn::init_normal(cls, 0.02, rng);
    nn::init_normal(type_embed, 0.02, rng);
    for (int l = 0; l < cfg.fusion_layers; ++l)
      blocks.emplace_back("fusion.block" + std::to_string(l), cfg.token_dim, cfg.heads, cfg.mlp_ratio, rng);
  }

  int dim() const { return static_cast<int>(cls.value.cols()); }

  // tokens: (B * sum(counts)) x d. key_padding, when given, covers the
  // B * (sum(counts) + 1) positions including CLS (which is never masked).
  MatrixF forward(const MatrixF& tokens, int batch, const std::vector<int>& counts,
                  const std::vector<std::uint8_t>* key_padding, Cache* cache) const {
    const int d = dim();
    require_shape(tokens.cols() == d, "fusion: token width " + std::to_string(tokens.cols()) +
                                          " != " + std::to_string(d));
    require_shape(counts.size() <= static_cast<std::size_t>(type_embed.value.rows()),
                  "fusion: more modalities than type embeddings");
    int ltok = 0;
    for (int c : counts) ltok += c;
    require_shape(tokens.rows() == static_cast<Eigen::Index>(batch) * ltok, "fusion: token rows != B*L");
    require(batch > 0, "fusion: empty batch");
    const int length = ltok + 1;

    MatrixF x(static_cast<Eigen::Index>(batch) * length, d);
    for (int b = 0; b < batch; ++b) {
      int pos = 0;
      for (std::size_t m = 0; m < counts.size(); ++m)
        for (int t = 0; t < counts[m]; ++t, ++pos)
          x.row(static_cast<Eigen::Index>(b) * length + pos) =
              tokens.row(static_cast<Eigen::Index>(b) * ltok + pos) + type_embed.value.row(static_cast<Eigen::Index>(m));
      x.row(static_cast<Eigen::Index>(b) * length + ltok) = cls.value.row(0);
    }
    if (cache) {
      cache->blocks.assign(blocks.size(), {});
      cache->counts = counts;
      cache->batch = batch;
    }
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const bool last = l + 1 == blocks.size();
      x = blocks[l].forward(x, batch, length, last, key_padding, cache ? &cache->blocks[l] : nullptr);
    }
    return final_ln.forward(x, cache ? &cache->final_ln : nullptr);
  }

  MatrixF backward(const Cache& c, const MatrixF& dcls_out) {
    int ltok = 0;
    for (int n : c.counts) ltok += n;
    const int length = ltok + 1;
    MatrixF g = final_ln.backward(c.final_ln, dcls_out);
    for (std::size_t l = blocks.size(); l-- > 0;) g = blocks[l].backward(c.blocks[l], g);

    MatrixF dtokens(static_cast<Eigen::Index>(c.batch) * ltok, dim());
    for (int b = 0; b < c.batch; ++b) {
      int pos = 0;
      for (std::size_t m = 0; m < c.counts.size(); ++m)
        for (int t = 0; t < c.counts[m]; ++t, ++pos) {
          auto row = g.row(static_cast<Eigen::Index>(b) * length + pos);
          dtokens.row(static_cast<Eigen::Index>(b) * ltok + pos) = row;
          type_embed.grad.row(static_cast<Eigen::Index>(m)) += row;
        }
      cls.grad.row(0) += g.row(static_cast<Eigen::Index>(b) * length + ltok);
    }
    return dtokens;
  }

  void collect(nn::ParamList& out) {
    out.push_back(&cls);
    out.push_back(&type_embed);
    for (auto& b : blocks) b.collect(out);
    final_ln.collect(out);
  }
};

// ---------------------------------------------------------------------------
// Two-layer MLP followed by L2 normalisation.
struct ProjectionHead {
  nn::Linear fc1, fc2;

  struct Cache {
    nn::Linear::Cache fc1, fc2;
    MatrixF hidden;
    nn::L2NormCache norm;
  };

  ProjectionHead() = default;
  ProjectionHead(const ModelConfig& cfg, Rng& rng)
      : fc1("head.fc1", cfg.token_dim, cfg.head_hidden, rng), fc2("head.fc2", cfg.head_hidden, cfg.embed_dim, rng) {}

  MatrixF forward(const MatrixF& x, Cache* cache) const {
    MatrixF h = fc1.forward(x, cache ? &cache->fc1 : nullptr);
    MatrixF y = fc2.forward(nn::relu(h), cache ? &cache->fc2 : nullptr);
    if (cache) cache->hidden = std::move(h);
    return nn::l2_normalize(y, cache ? &cache->norm : nullptr);
  }

  MatrixF backward(const Cache& c, const MatrixF& dz) {
    MatrixF g = fc2.backward(c.fc2, nn::l2_normalize_backward(c.norm, dz));
    return fc1.backward(c.fc1, nn::relu_backward(c.hidden, g));
  }

  void collect(nn::ParamList& out) {
    fc1.collect(out);
    fc2.collect(out);
  }
};

}  // namespace infmask::model
