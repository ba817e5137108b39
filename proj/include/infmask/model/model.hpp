#pragma once

#include <optional>
#include <string>
#include <vector>

#include "infmask/core/rng.hpp"
#include "infmask/core/types.hpp"
#include "infmask/model/config.hpp"
#include "infmask/model/masking.hpp"
#include "infmask/model/network.hpp"

namespace infmask::model {

// Describes how a batch of fusion sequences is gathered from per-modality
// token matrices. Sequence b holds counts[m] tokens of modality m, taken from
// rows src_rows[b*L + pos] of tokens[m]; a zero count leaves modality m out.
struct GatherPlan {
  int batch = 0;
  std::vector<int> counts;
  std::vector<int> src_rows;
  // Channel masking: per gathered row, a 0/1 multiplier over the token width.
  std::optional<MatrixF> channel_scale;

  int length() const {
    int l = 0;
    for (int c : counts) l += c;
    return l;
  }
};

// Full sequences: every token of image `images[m][b]` for each modality m
// with images[m] non-empty.
inline GatherPlan full_plan(const std::vector<std::vector<int>>& images, const std::vector<int>& tokens_per_modality) {
  GatherPlan p;
  p.counts.assign(images.size(), 0);
  for (std::size_t m = 0; m < images.size(); ++m) {
    if (images[m].empty()) continue;
    p.counts[m] = tokens_per_modality[m];
    if (p.batch == 0) p.batch = static_cast<int>(images[m].size());
    require_shape(static_cast<int>(images[m].size()) == p.batch, "full_plan: ragged modality batches");
  }
  for (int b = 0; b < p.batch; ++b)
    for (std::size_t m = 0; m < images.size(); ++m)
      for (int t = 0; t < p.counts[m]; ++t) p.src_rows.push_back(images[m][static_cast<std::size_t>(b)] * tokens_per_modality[m] + t);
  return p;
}

// One random mask per (sequence, modality) drawn from `rng`. In token mode
// only surviving tokens are gathered, which is identical to excluding the
// masked positions as attention keys. In channel mode all tokens are kept
// and a per-modality channel subset is zeroed.
struct MaskedPlan {
  GatherPlan plan;
  std::vector<std::vector<std::vector<int>>> survivors;  // [m][b] kept token (or channel) ids
};

inline MaskedPlan masked_plan(const std::vector<std::vector<int>>& images, const std::vector<int>& tokens_per_modality,
                              int width, const MaskSpec& spec, Rng& rng) {
  MaskedPlan out;
  GatherPlan& p = out.plan;
  const std::size_t nm = images.size();
  p.counts.assign(nm, 0);
  out.survivors.assign(nm, {});
  for (std::size_t m = 0; m < nm; ++m) {
    if (images[m].empty()) continue;
    if (p.batch == 0) p.batch = static_cast<int>(images[m].size());
    const int t = tokens_per_modality[m];
    p.counts[m] = spec.mode == MaskMode::Token ? t - masked_count(spec.ratio, t) : t;
    out.survivors[m].resize(static_cast<std::size_t>(p.batch));
  }
  for (int b = 0; b < p.batch; ++b)
    for (std::size_t m = 0; m < nm; ++m) {
      if (images[m].empty()) continue;
      const int t = tokens_per_modality[m];
      auto keep = sample_survivors(spec.mode == MaskMode::Token ? t : width, spec.ratio, rng);
      const int base = images[m][static_cast<std::size_t>(b)] * t;
      if (spec.mode == MaskMode::Token) {
        for (int k : keep) p.src_rows.push_back(base + k);
      } else {
        for (int k = 0; k < t; ++k) p.src_rows.push_back(base + k);
      }
      out.survivors[m][static_cast<std::size_t>(b)] = std::move(keep);
    }
  if (spec.mode == MaskMode::Channel) {
    const int length = p.length();
    p.channel_scale = MatrixF::Zero(static_cast<Eigen::Index>(p.batch) * length, width);
    for (int b = 0; b < p.batch; ++b) {
      int pos = 0;
      for (std::size_t m = 0; m < nm; ++m)
        for (int k = 0; k < p.counts[m]; ++k, ++pos)
          for (int ch : out.survivors[m][static_cast<std::size_t>(b)])
            (*p.channel_scale)(static_cast<Eigen::Index>(b) * length + pos, ch) = 1.0f;
    }
  }
  return out;
}

class InfMaskingModel {
 public:
  struct FuseCache {
    FusionTransformer::Cache fusion;
    ProjectionHead::Cache head;
    GatherPlan plan;
  };

  InfMaskingModel() = default;
  explicit InfMaskingModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(cfg.init_seed, {0x4d4f44454cULL}));
    for (int m = 0; m < cfg.num_modalities; ++m) encoders_.emplace_back("enc" + std::to_string(m), cfg, rng);
    fusion_ = FusionTransformer(cfg, rng);
    head_ = ProjectionHead(cfg, rng);
  }

  // Copies share nothing; parameter pointers are re-collected per object.
  InfMaskingModel(const InfMaskingModel&) = default;
  InfMaskingModel& operator=(const InfMaskingModel&) = default;

  const ModelConfig& config() const { return cfg_; }
  int tokens_per_modality() const { return cfg_.tokens_per_modality(); }
  std::vector<int> token_counts() const {
    return std::vector<int>(static_cast<std::size_t>(cfg_.num_modalities), tokens_per_modality());
  }

  nn::ParamList parameters() {
    nn::ParamList out;
    for (auto& e : encoders_) e.collect(out);
    fusion_.collect(out);
    head_.collect(out);
    return out;
  }

  MatrixF encode(int modality, const MatrixF& images, int batch, ConvEncoder::Cache* cache) const {
    return encoders_.at(static_cast<std::size_t>(modality)).forward(images, batch, cache);
  }

  void encode_backward(int modality, const ConvEncoder::Cache& cache, const MatrixF& dtokens) {
    encoders_.at(static_cast<std::size_t>(modality)).backward(cache, dtokens);
  }

  // Gathers sequences per `plan`, fuses them and returns unit-norm embeddings.
  MatrixF fuse(const std::vector<const MatrixF*>& tokens, const GatherPlan& plan, FuseCache* cache,
               const std::vector<std::uint8_t>* key_padding = nullptr) const {
    MatrixF cls = fuse_cls(tokens, plan, cache, key_padding);
    return head_.forward(cls, cache ? &cache->head : nullptr);
  }

  // CLS output of the fusion transformer, before the projection head.
  MatrixF fuse_cls(const std::vector<const MatrixF*>& tokens, const GatherPlan& plan, FuseCache* cache = nullptr,
                   const std::vector<std::uint8_t>* key_padding = nullptr) const {
    const int d = cfg_.token_dim;
    const int length = plan.length();
    require(length > 0, "fusion: empty token sequence");
    require_shape(tokens.size() >= plan.counts.size(), "fusion: missing token matrices");
    MatrixF x(static_cast<Eigen::Index>(plan.batch) * length, d);
    for (int b = 0; b < plan.batch; ++b) {
      int pos = 0;
      for (std::size_t m = 0; m < plan.counts.size(); ++m)
        for (int k = 0; k < plan.counts[m]; ++k, ++pos) {
          const Eigen::Index r = static_cast<Eigen::Index>(b) * length + pos;
          const MatrixF& src = *tokens[m];
          require_shape(src.cols() == d, "fusion: token width mismatch");
          x.row(r) = src.row(plan.src_rows[static_cast<std::size_t>(r)]);
        }
    }
    if (plan.channel_scale) x.array() *= plan.channel_scale->array();
    MatrixF cls = fusion_.forward(x, plan.batch, plan.counts, key_padding, cache ? &cache->fusion : nullptr);
    if (cache) cache->plan = plan;
    return cls;
  }

  // Accumulates token gradients into dtokens[m] (same shapes as the inputs).
  void fuse_backward(const FuseCache& cache, const MatrixF& dz, std::vector<MatrixF>& dtokens) {
    MatrixF dcls = head_.backward(cache.head, dz);
    MatrixF dx = fusion_.backward(cache.fusion, dcls);
    const GatherPlan& plan = cache.plan;
    if (plan.channel_scale) dx.array() *= plan.channel_scale->array();
    const int length = plan.length();
    for (int b = 0; b < plan.batch; ++b) {
      int pos = 0;
      for (std::size_t m = 0; m < plan.counts.size(); ++m)
        for (int k = 0; k < plan.counts[m]; ++k, ++pos) {
          const Eigen::Index r = static_cast<Eigen::Index>(b) * length + pos;
          dtokens[m].row(plan.src_rows[static_cast<std::size_t>(r)]) += dx.row(r);
        }
    }
  }

  FusionTransformer& fusion() { return fusion_; }
  const FusionTransformer& fusion() const { return fusion_; }

 private:
  ModelConfig cfg_;
  std::vector<ConvEncoder> encoders_;
  FusionTransformer fusion_;
  ProjectionHead head_;
};

}  // namespace infmask::model
