#pragma once

#include <cmath>
#include <vector>

#include "infmask/nn/param.hpp"

namespace infmask::nn {

struct AdamWOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Adam with decoupled weight decay. Owns the moment buffers for a fixed
// parameter list; the list order must not change between steps.
class AdamW {
 public:
  AdamW(ParamList params, AdamWOptions opts) : params_(std::move(params)), opts_(opts) {
    for (auto* p : params_) {
      m_.push_back(MatrixF::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(MatrixF::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, t_);
    const double bc2 = 1.0 - std::pow(opts_.beta2, t_);
    const auto b1 = static_cast<float>(opts_.beta1), b2 = static_cast<float>(opts_.beta2);
    const auto step_size = static_cast<float>(opts_.lr / bc1);
    const auto inv_bc2 = static_cast<float>(1.0 / bc2);
    const auto eps = static_cast<float>(opts_.eps);
    const auto decay = static_cast<float>(1.0 - opts_.lr * opts_.weight_decay);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param& p = *params_[i];
      if (p.decay) p.value *= decay;
      m_[i] = b1 * m_[i] + (1.0f - b1) * p.grad;
      v_[i] = b2 * v_[i] + (1.0f - b2) * p.grad.cwiseAbs2();
      p.value.array() -= step_size * m_[i].array() / ((v_[i].array() * inv_bc2).sqrt() + eps);
    }
  }

  void set_lr(double lr) { opts_.lr = lr; }
  long steps() const { return t_; }
  const AdamWOptions& options() const { return opts_; }

 private:
  ParamList params_;
  AdamWOptions opts_;
  std::vector<MatrixF> m_, v_;
  long t_ = 0;
};

}  // namespace infmask::nn
