#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "infmask/core/rng.hpp"
#include "infmask/core/types.hpp"

namespace infmask::nn {

// A named trainable array. Vectors are stored as 1 x n.
struct Param {
  std::string name;
  MatrixF value;
  MatrixF grad;
  bool decay = true;  // subject to decoupled weight decay

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols, bool wd = true)
      : name(std::move(n)), value(MatrixF::Zero(rows, cols)), grad(MatrixF::Zero(rows, cols)), decay(wd) {}

  void zero_grad() { grad.setZero(); }
};

using ParamList = std::vector<Param*>;

inline void init_uniform(Param& p, double bound, Rng& rng) {
  std::uniform_real_distribution<float> d(static_cast<float>(-bound), static_cast<float>(bound));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = d(rng);
}

inline void init_normal(Param& p, double stddev, Rng& rng) {
  std::normal_distribution<float> d(0.0f, static_cast<float>(stddev));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = d(rng);
}

inline void zero_grads(const ParamList& params) {
  for (auto* p : params) p->zero_grad();
}

inline std::size_t count_scalars(const ParamList& params) {
  std::size_t n = 0;
  for (auto* p : params) n += static_cast<std::size_t>(p->value.size());
  return n;
}

}  // namespace infmask::nn
