#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "infmask/core/types.hpp"
#include "infmask/nn/layers.hpp"

namespace infmask::nn {

// Multi-head self-attention over a batch of equal-length sequences stored as
// (B*L) x d. Keys flagged in `key_padding` (B*L entries, nonzero = excluded)
// receive zero attention weight. With `last_query_only` only the final
// position of each sequence issues a query, which is all a CLS readout needs.
struct MultiHeadAttention {
  Linear q, k, v, o;
  int heads = 8;

  struct Cache {
    Linear::Cache q, k, v, o;
    MatrixF Q, K, V, P;  // P: (B*H*Lq) x L
    int batch = 0, length = 0, qlen = 0;
    bool last_query_only = false;
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, int dim, int num_heads, Rng& rng)
      : q(name + ".q", dim, dim, rng),
        k(name + ".k", dim, dim, rng),
        v(name + ".v", dim, dim, rng),
        o(name + ".o", dim, dim, rng),
        heads(num_heads) {
    if (num_heads <= 0 || dim % num_heads != 0)
      throw ConfigError("attention width " + std::to_string(dim) + " not divisible by " +
                        std::to_string(num_heads) + " heads");
  }

  int dim() const { return q.in_features(); }

  MatrixF forward(const MatrixF& x, int batch, int length, bool last_query_only,
                  const std::vector<std::uint8_t>* key_padding, Cache* cache) const {
    require_shape(x.rows() == static_cast<Eigen::Index>(batch) * length, "attention: row count != B*L");
    const int d = dim();
    const int dh = d / heads;
    const int lq = last_query_only ? 1 : length;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    MatrixF xq;
    if (last_query_only) {
      xq.resize(batch, d);
      for (int b = 0; b < batch; ++b) xq.row(b) = x.row(static_cast<Eigen::Index>(b) * length + length - 1);
    }
    Cache local;
    Cache& c = cache ? *cache : local;
    c.batch = batch;
    c.length = length;
    c.qlen = lq;
    c.last_query_only = last_query_only;
    c.Q = q.forward(last_query_only ? xq : x, cache ? &c.q : nullptr);
    c.K = k.forward(x, cache ? &c.k : nullptr);
    c.V = v.forward(x, cache ? &c.v : nullptr);
    c.P.resize(static_cast<Eigen::Index>(batch) * heads * lq, length);

    MatrixF concat(static_cast<Eigen::Index>(batch) * lq, d);
    MatrixF scores(lq, length);
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        scores.noalias() = c.Q.block(static_cast<Eigen::Index>(b) * lq, h * dh, lq, dh) *
                           c.K.block(static_cast<Eigen::Index>(b) * length, h * dh, length, dh).transpose();
        scores *= scale;
        if (key_padding) {
          for (int j = 0; j < length; ++j)
            if ((*key_padding)[static_cast<std::size_t>(b) * length + j])
              scores.col(j).setConstant(-std::numeric_limits<float>::infinity());
        }
        for (int i = 0; i < lq; ++i) {
          auto row = scores.row(i);
          const float mx = row.maxCoeff();
          require(std::isfinite(mx), "attention: every key of a sequence is masked");
          row = (row.array() - mx).exp();
          row /= row.sum();
        }
        c.P.block((static_cast<Eigen::Index>(b) * heads + h) * lq, 0, lq, length) = scores;
        concat.block(static_cast<Eigen::Index>(b) * lq, h * dh, lq, dh).noalias() =
            scores * c.V.block(static_cast<Eigen::Index>(b) * length, h * dh, length, dh);
      }
    }
    return o.forward(concat, cache ? &c.o : nullptr);
  }

  // Gradient w.r.t. the full (B*L) x d input.
  MatrixF backward(const Cache& c, const MatrixF& dy) {
    const int d = dim();
    const int dh = d / heads;
    const int lq = c.qlen, length = c.length;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    MatrixF dconcat = o.backward(c.o, dy);
    MatrixF dQ = MatrixF::Zero(c.Q.rows(), d);
    MatrixF dK = MatrixF::Zero(c.K.rows(), d);
    MatrixF dV = MatrixF::Zero(c.V.rows(), d);
    MatrixF dP(lq, length);
    for (int b = 0; b < c.batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        const auto P = c.P.block((static_cast<Eigen::Index>(b) * heads + h) * lq, 0, lq, length);
        const auto dO = dconcat.block(static_cast<Eigen::Index>(b) * lq, h * dh, lq, dh);
        const auto Vb = c.V.block(static_cast<Eigen::Index>(b) * length, h * dh, length, dh);
        const auto Kb = c.K.block(static_cast<Eigen::Index>(b) * length, h * dh, length, dh);
        const auto Qb = c.Q.block(static_cast<Eigen::Index>(b) * lq, h * dh, lq, dh);
        dV.block(static_cast<Eigen::Index>(b) * length, h * dh, length, dh).noalias() += P.transpose() * dO;
        dP.noalias() = dO * Vb.transpose();
        Eigen::VectorXf rowdot = (dP.array() * P.array()).rowwise().sum();
        MatrixF dS = (P.array() * (dP.array().colwise() - rowdot.array())).matrix() * scale;
        dQ.block(static_cast<Eigen::Index>(b) * lq, h * dh, lq, dh).noalias() += dS * Kb;
        dK.block(static_cast<Eigen::Index>(b) * length, h * dh, length, dh).noalias() += dS.transpose() * Qb;
      }
    }
    MatrixF dx = k.backward(c.k, dK);
    dx += v.backward(c.v, dV);
    MatrixF dxq = q.backward(c.q, dQ);
    if (c.last_query_only) {
      for (int b = 0; b < c.batch; ++b) dx.row(static_cast<Eigen::Index>(b) * length + length - 1) += dxq.row(b);
    } else {
      dx += dxq;
    }
    return dx;
  }

  void collect(ParamList& out) {
    q.collect(out);
    k.collect(out);
    v.collect(out);
    o.collect(out);
  }
};

}  // namespace infmask::nn
