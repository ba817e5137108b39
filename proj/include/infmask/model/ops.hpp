#pragma once

// Sample-level entry points: encode a batch of multimodal samples into
// per-modality tokens, fuse them, or fuse them under random masks.

#include <optional>
#include <vector>

#include "infmask/augment/pipeline.hpp"
#include "infmask/losses/losses.hpp"
#include "infmask/model/model.hpp"

namespace infmask::model {

// Per-modality token matrices for a batch; tokens[m] is (batch * T) x d_tok,
// row b * T + t holding token t of sample b. Absent modalities are empty.
struct TokenSet {
  std::vector<std::optional<MatrixF>> tokens;
  int batch = 0;
  int tokens_per_modality = 0;
  int width = 0;

  bool has(std::size_t m) const { return m < tokens.size() && tokens[m].has_value(); }
  std::size_t present() const {
    std::size_t n = 0;
    for (const auto& t : tokens) n += t.has_value();
    return n;
  }
};

struct MaskedViewSet {
  std::vector<losses::EmbeddingBatch> views;
  losses::EmbeddingBatch unmasked;
  // survivors[view][m][b]: kept token ids (channel ids in channel mode)
  std::vector<std::vector<std::vector<std::vector<int>>>> survivors;
};

inline losses::EmbeddingBatch to_embedding_batch(const MatrixF& z) {
  return losses::EmbeddingBatch::sequential(z.cast<double>());
}

inline TokenSet encode(const InfMaskingModel& model, const std::vector<augment::MultimodalSample>& batch) {
  require_shape(!batch.empty(), "encode: empty batch");
  const auto& cfg = model.config();
  const std::size_t nm = batch.front().num_modalities();
  require_shape(nm == static_cast<std::size_t>(cfg.num_modalities),
                "encode: sample has " + std::to_string(nm) + " modalities, model expects " +
                    std::to_string(cfg.num_modalities));
  TokenSet out;
  out.batch = static_cast<int>(batch.size());
  out.tokens_per_modality = model.tokens_per_modality();
  out.width = cfg.token_dim;
  out.tokens.resize(nm);
  for (std::size_t m = 0; m < nm; ++m) {
    const bool present = batch.front().has(m);
    std::vector<const Image*> imgs;
    for (const auto& s : batch) {
      require_shape(s.num_modalities() == nm && s.has(m) == present, "encode: samples disagree on modality presence");
      if (!present) continue;
      const Image& img = *s.modalities[m];
      require_shape(img.height == cfg.image_size && img.width == cfg.image_size,
                    "encode: image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        ", model expects " + std::to_string(cfg.image_size));
      imgs.push_back(&img);
    }
    if (present) out.tokens[m] = model.encode(static_cast<int>(m), image_batch(imgs), out.batch, nullptr);
  }
  return out;
}

namespace detail {

inline std::vector<std::vector<int>> identity_images(const TokenSet& t) {
  std::vector<std::vector<int>> images(t.tokens.size());
  for (std::size_t m = 0; m < t.tokens.size(); ++m)
    if (t.has(m))
      for (int b = 0; b < t.batch; ++b) images[m].push_back(b);
  return images;
}

inline std::vector<const MatrixF*> token_pointers(const TokenSet& t) {
  static const MatrixF kEmpty;
  std::vector<const MatrixF*> out;
  for (const auto& m : t.tokens) out.push_back(m ? &*m : &kEmpty);
  return out;
}

}  // namespace detail

// Fuses all present modalities; a projected sample yields a unimodal embedding.
inline losses::EmbeddingBatch fuse(const InfMaskingModel& model, const TokenSet& tokens) {
  require(tokens.present() > 0, "fuse: empty token sequence");
  GatherPlan plan = full_plan(detail::identity_images(tokens), model.token_counts());
  return to_embedding_batch(model.fuse(detail::token_pointers(tokens), plan, nullptr));
}

// M' independently masked fusions plus the unmasked fusion. View v draws its
// masks from a stream derived from (seed, v).
inline MaskedViewSet mask_and_fuse(const InfMaskingModel& model, const TokenSet& tokens, const MaskSpec& spec,
                                   std::uint64_t seed) {
  require(tokens.present() > 0, "mask_and_fuse: empty token sequence");
  spec.validate(model.token_counts(), model.config().token_dim);
  const auto images = detail::identity_images(tokens);
  const auto ptrs = detail::token_pointers(tokens);
  MaskedViewSet out;
  out.unmasked = fuse(model, tokens);
  for (int v = 0; v < spec.views; ++v) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(v)}));
    MaskedPlan mp = masked_plan(images, model.token_counts(), model.config().token_dim, spec, rng);
    out.views.push_back(to_embedding_batch(model.fuse(ptrs, mp.plan, nullptr)));
    out.survivors.push_back(std::move(mp.survivors));
  }
  return out;
}

}  // namespace infmask::model
