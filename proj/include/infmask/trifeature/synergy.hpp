#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>

#include "infmask/core/rng.hpp"
#include "infmask/core/types.hpp"
#include "infmask/trifeature/registry.hpp"

namespace infmask::trifeature {

// Bijection texture id -> colour id defining the synergy relation.
struct SynergyMapping {
  std::array<int, kNumCategories> texture_to_color{};
  std::uint64_t seed = 0;

  static SynergyMapping from_seed(std::uint64_t seed) {
    SynergyMapping m;
    m.seed = seed;
    std::iota(m.texture_to_color.begin(), m.texture_to_color.end(), 0);
    Rng rng(derive_seed(seed, {0x4d4150ULL}));
    std::shuffle(m.texture_to_color.begin(), m.texture_to_color.end(), rng);
    return m;
  }

  bool valid() const {
    std::array<bool, kNumCategories> seen{};
    for (int c : texture_to_color) {
      if (c < 0 || c >= kNumCategories || seen[static_cast<std::size_t>(c)]) return false;
      seen[static_cast<std::size_t>(c)] = true;
    }
    return true;
  }

  int color_for(int texture) const { return texture_to_color.at(static_cast<std::size_t>(texture)); }

  bool contains(int texture, int color) const {
    return texture >= 0 && texture < kNumCategories && color_for(texture) == color;
  }
};

// 1 iff the mapping sends the first image's texture to the second image's colour.
inline int synergy_label(int texture_x1, int color_x2, const SynergyMapping& m) {
  if (!m.valid()) throw ParameterError("synergy mapping is not a bijection");
  return m.contains(texture_x1, color_x2) ? 1 : 0;
}

}  // namespace infmask::trifeature
