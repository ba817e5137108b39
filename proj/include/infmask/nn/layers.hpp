#pragma once

// Dense building blocks with explicit backward passes. Every forward takes an
// optional cache pointer; passing nullptr runs in inference mode. Backward
// accumulates parameter gradients and returns the input gradient.

#include <cmath>
#include <numbers>
#include <string>

#include "infmask/core/rng.hpp"
#include "infmask/core/types.hpp"
#include "infmask/nn/param.hpp"

namespace infmask::nn {

// ---------------------------------------------------------------------------
struct Linear {
  Param weight;  // in x out
  Param bias;    // 1 x out

  struct Cache {
    MatrixF input;
  };

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng, double gain = 1.0)
      : weight(name + ".weight", in, out), bias(name + ".bias", 1, out, false) {
    // Xavier-uniform scaled by gain
    init_uniform(weight, gain * std::sqrt(6.0 / (in + out)), rng);
  }

  int in_features() const { return static_cast<int>(weight.value.rows()); }
  int out_features() const { return static_cast<int>(weight.value.cols()); }

  MatrixF forward(const MatrixF& x, Cache* cache) const {
    require_shape(x.cols() == weight.value.rows(),
                  weight.name + ": expected " + std::to_string(weight.value.rows()) + " input features, got " +
                      std::to_string(x.cols()));
    MatrixF y = x * weight.value;
    y.rowwise() += bias.value.row(0);
    if (cache) cache->input = x;
    return y;
  }

  MatrixF backward(const Cache& cache, const MatrixF& dy) {
    weight.grad.noalias() += cache.input.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    return dy * weight.value.transpose();
  }

  void collect(ParamList& out) { out.insert(out.end(), {&weight, &bias}); }
};

// ---------------------------------------------------------------------------
// 2-D convolution over NHWC batches stored as (N*H*W) x C matrices.
struct Conv2d {
  Param weight;  // (k*k*Cin) x Cout
  Param bias;    // 1 x Cout
  int in_channels = 0, out_channels = 0, kernel = 3, stride = 1, padding = 1;

  struct Cache {
    MatrixF cols;
    int batch = 0, in_h = 0, in_w = 0;
  };

  Conv2d() = default;
  Conv2d(const std::string& name, int cin, int cout, int k, int s, int pad, Rng& rng)
      : weight(name + ".weight", k * k * cin, cout),
        bias(name + ".bias", 1, cout, false),
        in_channels(cin),
        out_channels(cout),
        kernel(k),
        stride(s),
        padding(pad) {
    // He-uniform for ReLU networks
    init_uniform(weight, std::sqrt(6.0 / (k * k * cin)), rng);
  }

  int out_size(int in) const { return (in + 2 * padding - kernel) / stride + 1; }

  MatrixF im2col(const MatrixF& x, int n, int h, int w) const {
    const int ho = out_size(h), wo = out_size(w);
    MatrixF cols = MatrixF::Zero(static_cast<Eigen::Index>(n) * ho * wo, kernel * kernel * in_channels);
    for (int b = 0; b < n; ++b)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const Eigen::Index r = (static_cast<Eigen::Index>(b) * ho + oy) * wo + ox;
          float* dst = cols.row(r).data();
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const int ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= w) continue;
              const float* src = x.row((static_cast<Eigen::Index>(b) * h + iy) * w + ix).data();
              std::copy(src, src + in_channels, dst + (ky * kernel + kx) * in_channels);
            }
          }
        }
    return cols;
  }

  MatrixF col2im(const MatrixF& dcols, int n, int h, int w) const {
    const int ho = out_size(h), wo = out_size(w);
    MatrixF dx = MatrixF::Zero(static_cast<Eigen::Index>(n) * h * w, in_channels);
    for (int b = 0; b < n; ++b)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const Eigen::Index r = (static_cast<Eigen::Index>(b) * ho + oy) * wo + ox;
          const float* src = dcols.row(r).data();
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const int ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= w) continue;
              float* dst = dx.row((static_cast<Eigen::Index>(b) * h + iy) * w + ix).data();
              const float* s = src + (ky * kernel + kx) * in_channels;
              for (int c = 0; c < in_channels; ++c) dst[c] += s[c];
            }
          }
        }
    return dx;
  }

  MatrixF forward(const MatrixF& x, int n, int h, int w, Cache* cache) const {
    require_shape(x.cols() == in_channels && x.rows() == static_cast<Eigen::Index>(n) * h * w,
                  weight.name + ": input shape mismatch");
    MatrixF cols = im2col(x, n, h, w);
    MatrixF y = cols * weight.value;
    y.rowwise() += bias.value.row(0);
    if (cache) {
      cache->cols = std::move(cols);
      cache->batch = n;
      cache->in_h = h;
      cache->in_w = w;
    }
    return y;
  }

  // Returns the input gradient unless `need_input_grad` is false (first layer).
  MatrixF backward(const Cache& cache, const MatrixF& dy, bool need_input_grad = true) {
    weight.grad.noalias() += cache.cols.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    if (!need_input_grad) return {};
    MatrixF dcols = dy * weight.value.transpose();
    return col2im(dcols, cache.batch, cache.in_h, cache.in_w);
  }

  void collect(ParamList& out) { out.insert(out.end(), {&weight, &bias}); }
};

// ---------------------------------------------------------------------------
struct LayerNorm {
  Param gamma;
  Param beta;
  float eps = 1e-5f;

  struct Cache {
    MatrixF xhat;
    VectorF inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim)
      : gamma(name + ".gamma", 1, dim, false), beta(name + ".beta", 1, dim, false) {
    gamma.value.setOnes();
  }

  MatrixF forward(const MatrixF& x, Cache* cache) const {
    const Eigen::Index d = x.cols();
    VectorF mean = x.rowwise().mean();
    MatrixF xc = x.colwise() - mean;
    VectorF var = xc.array().square().rowwise().sum() / static_cast<float>(d);
    VectorF inv = (var.array() + eps).rsqrt();
    MatrixF xhat = xc.array().colwise() * inv.array();
    MatrixF y = (xhat.array().rowwise() * gamma.value.row(0).array()).rowwise() + beta.value.row(0).array();
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv);
    }
    return y;
  }

  MatrixF backward(const Cache& cache, const MatrixF& dy) {
    const auto d = static_cast<float>(dy.cols());
    gamma.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    beta.grad.row(0) += dy.colwise().sum();
    MatrixF g = dy.array().rowwise() * gamma.value.row(0).array();
    VectorF mean_g = g.rowwise().sum() / d;
    VectorF mean_gx = (g.array() * cache.xhat.array()).rowwise().sum() / d;
    MatrixF dx = g;
    dx.colwise() -= mean_g;
    dx.array() -= cache.xhat.array().colwise() * mean_gx.array();
    dx.array().colwise() *= cache.inv_std.array();
    return dx;
  }

  void collect(ParamList& out) { out.insert(out.end(), {&gamma, &beta}); }
};

// ---------------------------------------------------------------------------
// Stateless activations. Their caches hold the forward input.

inline MatrixF relu(const MatrixF& x) { return x.cwiseMax(0.0f); }

inline MatrixF relu_backward(const MatrixF& x, const MatrixF& dy) {
  return (x.array() > 0.0f).select(dy, 0.0f);
}

// tanh approximation
inline MatrixF gelu(const MatrixF& x) {
  constexpr float k = 0.7978845608028654f;  // sqrt(2/pi)
  return (0.5f * x.array() * (1.0f + (k * (x.array() + 0.044715f * x.array().cube())).tanh())).matrix();
}

inline MatrixF gelu_backward(const MatrixF& x, const MatrixF& dy) {
  constexpr float k = 0.7978845608028654f;
  auto u = k * (x.array() + 0.044715f * x.array().cube());
  Eigen::ArrayXXf t = u.tanh();
  Eigen::ArrayXXf du = k * (1.0f + 3.0f * 0.044715f * x.array().square());
  Eigen::ArrayXXf grad = 0.5f * (1.0f + t) + 0.5f * x.array() * (1.0f - t.square()) * du;
  return (dy.array() * grad).matrix();
}

// Row-wise L2 normalisation; caches the output and the row norms.
struct L2NormCache {
  MatrixF y;
  VectorF norm;
};

inline MatrixF l2_normalize(const MatrixF& x, L2NormCache* cache, float eps = 1e-12f) {
  VectorF n = x.rowwise().norm().cwiseMax(eps);
  MatrixF y = x.array().colwise() / n.array();
  if (cache) {
    cache->y = y;
    cache->norm = n;
  }
  return y;
}

inline MatrixF l2_normalize_backward(const L2NormCache& c, const MatrixF& dy) {
  VectorF dot = (c.y.array() * dy.array()).rowwise().sum();
  MatrixF dx = dy - (c.y.array().colwise() * dot.array()).matrix();
  dx.array().colwise() /= c.norm.array();
  return dx;
}

}  // namespace infmask::nn
