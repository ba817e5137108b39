#pragma once

#include <string>
#include <vector>

#include "infmask/core/types.hpp"
#include "infmask/model/masking.hpp"

namespace infmask::model {

struct ModelConfig {
  int num_modalities = 2;
  int image_size = 64;
  std::vector<int> conv_channels = {16, 32, 64, 64};  // one stride-2 stage each
  bool encoder_norm = false;  // LayerNorm over channels after each conv
  int token_dim = 64;
  int fusion_layers = 1;
  int heads = 8;
  int mlp_ratio = 2;
  int head_hidden = 256;
  int embed_dim = 256;
  std::uint64_t init_seed = 0;

  // Tokens per modality: the final feature map flattened.
  int tokens_per_modality() const {
    int s = image_size;
    for (std::size_t i = 0; i < conv_channels.size(); ++i) s = (s + 2 - 3) / 2 + 1;
    return s * s;
  }

  void validate() const {
    if (num_modalities < 1) throw ConfigError("model needs at least one modality");
    if (conv_channels.empty()) throw ConfigError("encoder needs at least one conv stage");
    if (image_size < 8) throw ConfigError("image_size too small");
    if (heads < 1 || token_dim % heads != 0)
      throw ConfigError("token_dim " + std::to_string(token_dim) + " is not divisible by heads " +
                        std::to_string(heads));
    if (fusion_layers < 1) throw ConfigError("fusion_layers must be >= 1");
    if (embed_dim < 1 || head_hidden < 1 || mlp_ratio < 1) throw ConfigError("bad head/mlp width");
  }

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace infmask::model
