#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "infmask/core/rng.hpp"
#include "infmask/core/types.hpp"

namespace infmask::model {

enum class MaskMode { Token, Channel };

inline MaskMode parse_mask_mode(const std::string& s) {
  if (s == "token") return MaskMode::Token;
  if (s == "channel") return MaskMode::Channel;
  throw ParameterError("mask mode must be 'token' or 'channel', got '" + s + "'");
}

inline const char* mask_mode_name(MaskMode m) { return m == MaskMode::Token ? "token" : "channel"; }

// Number of entries dropped out of `n` at ratio r: ceil(r * n), with a small
// guard so that products like 0.7 * 10 do not round up past the exact value.
inline int masked_count(double ratio, int n) {
  return static_cast<int>(std::ceil(ratio * n - 1e-9));
}

struct MaskSpec {
  double ratio = 0.7;
  int views = 6;
  MaskMode mode = MaskMode::Token;

  // Throws if a modality with `tokens` positions (or `width` channels) would
  // be masked completely.
  void validate(const std::vector<int>& tokens_per_modality, int width) const {
    if (!(ratio >= 0.0) || !(ratio < 1.0))
      throw ParameterError("mask ratio must lie in [0, 1), got " + std::to_string(ratio));
    if (views < 1) throw ParameterError("number of masked views must be >= 1");
    const auto check = [&](int n, const char* what) {
      if (masked_count(ratio, n) >= n)
        throw ParameterError(std::string("mask ratio ") + std::to_string(ratio) + " masks every " + what +
                             " (" + std::to_string(n) + ")");
    };
    if (mode == MaskMode::Token)
      for (int t : tokens_per_modality) check(t, "token");
    else
      check(width, "channel");
  }
};

// Indices of the positions that survive one random mask, in ascending order.
inline std::vector<int> sample_survivors(int n, double ratio, Rng& rng) {
  const int drop = masked_count(ratio, n);
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  // partial Fisher-Yates: the first `drop` slots become the masked set
  for (int i = 0; i < drop; ++i) {
    const auto j = static_cast<std::size_t>(i) + uniform_index(rng, static_cast<std::size_t>(n - i));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
  }
  std::vector<int> keep(idx.begin() + drop, idx.end());
  std::sort(keep.begin(), keep.end());
  return keep;
}

}  // namespace infmask::model
