#pragma once

// Contrastive objectives on row-wise embedding batches, in double precision,
// each with an analytic gradient.
//
// Row i of an anchor batch and row i of a target batch form the positive
// pair; every other target row is a negative for anchor i.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "infmask/core/types.hpp"

namespace infmask::losses {

struct EmbeddingBatch {
  MatrixD z;
  std::vector<int> pair_index;

  static EmbeddingBatch sequential(MatrixD z) {
    EmbeddingBatch b{std::move(z), {}};
    b.pair_index.resize(static_cast<std::size_t>(b.z.rows()));
    for (std::size_t i = 0; i < b.pair_index.size(); ++i) b.pair_index[i] = static_cast<int>(i);
    return b;
  }
  int size() const { return static_cast<int>(z.rows()); }
};

enum class Estimator { MonteCarlo, GaussianBound };

inline Estimator parse_estimator(const std::string& s) {
  if (s == "mc" || s == "monte-carlo") return Estimator::MonteCarlo;
  if (s == "gaussian" || s == "gaussian-bound") return Estimator::GaussianBound;
  throw ParameterError("estimator must be 'mc' or 'gaussian', got '" + s + "'");
}

inline const char* estimator_name(Estimator e) { return e == Estimator::MonteCarlo ? "mc" : "gaussian"; }

struct LossConfig {
  double tau = 0.1;
  double lambda_mask = 1.0;   // lambda1: masking term
  double lambda_uni = 1.0;    // lambda2: sum of unimodal terms
  double lambda_cross = 1.0;  // lambda3: cross-view term
  Estimator estimator = Estimator::MonteCarlo;
  bool symmetric = false;  // also use the unmasked batch as anchors in the masking term

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("temperature must be > 0, got " + std::to_string(tau));
    if (lambda_mask < 0 || lambda_uni < 0 || lambda_cross < 0) throw ParameterError("loss weights must be >= 0");
    if (lambda_mask == 0 && lambda_uni == 0 && lambda_cross == 0) throw ParameterError("all loss weights are zero");
  }
};

inline void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("temperature must be > 0, got " + std::to_string(tau));
}

// ---------------------------------------------------------------------------
// InfoNCE estimate: mean_i [ a_i.b_i/tau - log sum_j exp(a_i.b_j/tau) ].

struct NceResult {
  double value = 0.0;
  MatrixD d_anchors;  // d value / d anchors
  MatrixD d_targets;  // d value / d targets
};

inline NceResult info_nce_grad(const MatrixD& a, const MatrixD& b, double tau, bool want_grad = true) {
  check_tau(tau);
  require_shape(a.rows() > 0, "info_nce: empty batch");
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "info_nce: anchor/target shapes differ");
  const Eigen::Index n = a.rows();
  MatrixD s = (a * b.transpose()) / tau;
  NceResult r;
  MatrixD p(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = s.row(i).maxCoeff();
    auto e = (s.row(i).array() - mx).exp();
    const double z = e.sum();
    total += s(i, i) - (mx + std::log(z));
    p.row(i) = e / z;
  }
  r.value = total / static_cast<double>(n);
  if (want_grad) {
    MatrixD ds = -p;
    ds.diagonal().array() += 1.0;
    ds /= static_cast<double>(n);
    r.d_anchors = ds * b / tau;
    r.d_targets = ds.transpose() * a / tau;
  }
  return r;
}

inline double info_nce(const EmbeddingBatch& anchors, const EmbeddingBatch& targets, double tau) {
  require_shape(anchors.size() > 0, "info_nce: empty batch");
  require_shape(anchors.pair_index == targets.pair_index, "info_nce: pair_index of anchors and targets differ");
  return info_nce_grad(anchors.z, targets.z, tau, false).value;
}

// ---------------------------------------------------------------------------
// Cross-view plus unimodal objective:
//   -I(Z', Z'') - sum_i 1/2 (I(Z_i, Z') + I(Z_i, Z'')).

struct CommResult {
  double cross = 0.0;        // L   = -I(Z', Z'')
  double unimodal = 0.0;     // sum_i L_i
  double value() const { return cross + unimodal; }
  MatrixD d_zp, d_zpp;              // gradients of the unimodal terms
  std::vector<MatrixD> d_uni;
  MatrixD d_zp_cross, d_zpp_cross;  // gradients of the cross term
};

inline CommResult comm_terms(const MatrixD& zp, const MatrixD& zpp, const std::vector<MatrixD>& uni, double tau,
                             bool want_grad = true) {
  CommResult r;
  auto c = info_nce_grad(zp, zpp, tau, want_grad);
  r.cross = -c.value;
  if (want_grad) {
    r.d_zp_cross = -c.d_anchors;
    r.d_zpp_cross = -c.d_targets;
    r.d_zp = MatrixD::Zero(zp.rows(), zp.cols());
    r.d_zpp = MatrixD::Zero(zpp.rows(), zpp.cols());
  }
  for (const auto& zi : uni) {
    auto a = info_nce_grad(zi, zp, tau, want_grad);
    auto b = info_nce_grad(zi, zpp, tau, want_grad);
    r.unimodal += -0.5 * (a.value + b.value);
    if (want_grad) {
      r.d_uni.push_back(-0.5 * (a.d_anchors + b.d_anchors));
      r.d_zp += -0.5 * a.d_targets;
      r.d_zpp += -0.5 * b.d_targets;
    }
  }
  return r;
}

inline double comm_loss(const EmbeddingBatch& zp, const EmbeddingBatch& zpp, const std::vector<EmbeddingBatch>& uni,
                        double tau, int num_modalities = -1) {
  if (num_modalities >= 0 && static_cast<int>(uni.size()) != num_modalities)
    throw ShapeError("comm_loss: expected " + std::to_string(num_modalities) + " unimodal batches, got " +
                     std::to_string(uni.size()));
  require_shape(zp.pair_index == zpp.pair_index, "comm_loss: pair_index mismatch");
  std::vector<MatrixD> z;
  for (const auto& u : uni) {
    require_shape(u.pair_index == zp.pair_index, "comm_loss: pair_index mismatch");
    z.push_back(u.z);
  }
  return comm_terms(zp.z, zpp.z, z, tau, false).value();
}

// ---------------------------------------------------------------------------
// Masking term, Monte-Carlo form:
//   -(1/M') sum_k [ I(Z'_mask^k, Z') + I(Z''_mask^k, Z'') ]
// with the masked embeddings as anchors.

struct MaskTermResult {
  double value = 0.0;
  std::vector<MatrixD> d_views_p, d_views_pp;
  MatrixD d_zp, d_zpp;
};

inline MaskTermResult infmasking_mc_grad(const std::vector<MatrixD>& views_p, const std::vector<MatrixD>& views_pp,
                                         const MatrixD& zp, const MatrixD& zpp, double tau, bool symmetric = false,
                                         bool want_grad = true) {
  check_tau(tau);
  require(!views_p.empty() && views_p.size() == views_pp.size(), "infmasking_mc: empty or unbalanced view set");
  MaskTermResult r;
  const double k = static_cast<double>(views_p.size());
  if (want_grad) {
    r.d_zp = MatrixD::Zero(zp.rows(), zp.cols());
    r.d_zpp = MatrixD::Zero(zpp.rows(), zpp.cols());
  }
  const auto branch = [&](const std::vector<MatrixD>& views, const MatrixD& z, std::vector<MatrixD>& dv, MatrixD& dz) {
    for (const auto& v : views) {
      auto a = info_nce_grad(v, z, tau, want_grad);
      double val = a.value;
      MatrixD gv, gz;
      if (want_grad) {
        gv = a.d_anchors;
        gz = a.d_targets;
      }
      if (symmetric) {
        auto b = info_nce_grad(z, v, tau, want_grad);
        val = 0.5 * (val + b.value);
        if (want_grad) {
          gv = 0.5 * (gv + b.d_targets);
          gz = 0.5 * (gz + b.d_anchors);
        }
      }
      r.value -= val / k;
      if (want_grad) {
        dv.push_back(-gv / k);
        dz += -gz / k;
      }
    }
  };
  branch(views_p, zp, r.d_views_p, r.d_zp);
  branch(views_pp, zpp, r.d_views_pp, r.d_zpp);
  return r;
}

inline double infmasking_mc(const std::vector<EmbeddingBatch>& views_p, const std::vector<EmbeddingBatch>& views_pp,
                            const EmbeddingBatch& zp, const EmbeddingBatch& zpp, double tau) {
  std::vector<MatrixD> vp, vpp;
  for (const auto& v : views_p) {
    require_shape(v.pair_index == zp.pair_index, "infmasking_mc: pair_index mismatch");
    vp.push_back(v.z);
  }
  for (const auto& v : views_pp) {
    require_shape(v.pair_index == zpp.pair_index, "infmasking_mc: pair_index mismatch");
    vpp.push_back(v.z);
  }
  return infmasking_mc_grad(vp, vpp, zp.z, zpp.z, tau, false, false).value;
}

// ---------------------------------------------------------------------------
// Gaussian statistics of the masked views, per anchor row.

struct GaussianStats {
  MatrixD mu;        // N x d
  MatrixD var_diag;  // N x d, unbiased
  int samples = 0;
  // Optional full covariance per anchor (verification only).
  std::optional<std::vector<MatrixD>> full;
};

inline GaussianStats estimate_gaussian_stats(const std::vector<MatrixD>& views, bool full_covariance = false) {
  require(views.size() >= 2, "estimate_gaussian_stats: need at least 2 masked views, got " + std::to_string(views.size()));
  const auto k = static_cast<double>(views.size());
  GaussianStats s;
  s.samples = static_cast<int>(views.size());
  s.mu = MatrixD::Zero(views[0].rows(), views[0].cols());
  for (const auto& v : views) {
    require_shape(v.rows() == s.mu.rows() && v.cols() == s.mu.cols(), "estimate_gaussian_stats: view shapes differ");
    s.mu += v;
  }
  s.mu /= k;
  s.var_diag = MatrixD::Zero(s.mu.rows(), s.mu.cols());
  for (const auto& v : views) s.var_diag += (v - s.mu).cwiseAbs2();
  s.var_diag /= (k - 1.0);
  if (full_covariance) {
    std::vector<MatrixD> cov(static_cast<std::size_t>(s.mu.rows()), MatrixD::Zero(s.mu.cols(), s.mu.cols()));
    for (Eigen::Index i = 0; i < s.mu.rows(); ++i) {
      for (const auto& v : views) {
        VectorD c = (v.row(i) - s.mu.row(i)).transpose();
        cov[static_cast<std::size_t>(i)] += c * c.transpose();
      }
      cov[static_cast<std::size_t>(i)] /= (k - 1.0);
    }
    s.full = std::move(cov);
  }
  return s;
}

inline GaussianStats estimate_gaussian_stats(const std::vector<EmbeddingBatch>& views) {
  std::vector<MatrixD> z;
  for (const auto& v : views) z.push_back(v.z);
  return estimate_gaussian_stats(z);
}

// Gradient of the view matrices given gradients w.r.t. mu and var_diag.
inline std::vector<MatrixD> gaussian_stats_backward(const std::vector<MatrixD>& views, const GaussianStats& s,
                                                    const MatrixD& d_mu, const MatrixD& d_var) {
  const auto k = static_cast<double>(views.size());
  std::vector<MatrixD> out;
  for (const auto& v : views) out.push_back(d_mu / k + d_var.cwiseProduct(v - s.mu) * (2.0 / (k - 1.0)));
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian lower bound of E_mask[I(Z_mask, Z)] for one branch. For anchor i
// with z_mask ~ N(mu_i, Sigma_i) and targets b_j:
//   s_ij   = b_j.mu_i/tau + b_j' Sigma_i b_j / (2 tau^2)
//   term_i = b_i.mu_i/tau - log sum_j exp(s_ij)
// The value is mean_i term_i.

struct BoundResult {
  double value = 0.0;
  MatrixD d_mu, d_var, d_targets;
};

inline BoundResult gaussian_bound_branch(const GaussianStats& s, const MatrixD& targets, double tau,
                                         bool want_grad = true) {
  check_tau(tau);
  require_shape(s.mu.rows() == targets.rows() && s.mu.cols() == targets.cols(),
                "gaussian bound: stats and targets differ in shape");
  require_shape(s.mu.rows() > 0, "gaussian bound: empty batch");
  if ((s.var_diag.array() < 0.0).any()) throw ParameterError("gaussian bound: negative variance entry");
  const Eigen::Index n = targets.rows();
  const double t2 = 2.0 * tau * tau;
  MatrixD sq = targets.cwiseAbs2();
  MatrixD lin = s.mu * targets.transpose() / tau;  // (i, j) = b_j.mu_i / tau
  MatrixD quad(n, n);
  if (s.full) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        quad(i, j) = (targets.row(j) * (*s.full)[static_cast<std::size_t>(i)]).dot(targets.row(j)) / t2;
  } else {
    quad = s.var_diag * sq.transpose() / t2;
  }
  MatrixD sc = lin + quad;
  BoundResult r;
  MatrixD p(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = sc.row(i).maxCoeff();
    auto e = (sc.row(i).array() - mx).exp();
    const double z = e.sum();
    total += lin(i, i) - (mx + std::log(z));
    p.row(i) = e / z;
  }
  r.value = total / static_cast<double>(n);
  if (want_grad) {
    require(!s.full.has_value(), "gaussian bound: gradients are only available for diagonal covariance");
    const double inv_n = 1.0 / static_cast<double>(n);
    // d/d mu_i = (b_i - sum_j p_ij b_j) / tau
    r.d_mu = (targets - p * targets) * (inv_n / tau);
    // d/d var_i = -sum_j p_ij b_j^2 / (2 tau^2)
    r.d_var = -(p * sq) * (inv_n / t2);
    // d/d b_j = delta_ij mu_i/tau - p_ij (mu_i/tau + var_i * b_j / tau^2)
    MatrixD pt = p.transpose();
    r.d_targets = (s.mu - pt * s.mu) / tau;
    r.d_targets -= targets.cwiseProduct(pt * s.var_diag) * (2.0 / t2);
    r.d_targets *= inv_n;
  }
  return r;
}

struct GaussianMaskResult {
  double value = 0.0;
  std::vector<MatrixD> d_views_p, d_views_pp;
  MatrixD d_zp, d_zpp;
};

// Negated bound summed over both branches.
inline double infmasking_gaussian_bound(const GaussianStats& sp, const GaussianStats& spp, const MatrixD& zp,
                                        const MatrixD& zpp, double tau) {
  return -(gaussian_bound_branch(sp, zp, tau, false).value + gaussian_bound_branch(spp, zpp, tau, false).value);
}

inline double infmasking_gaussian_bound(const GaussianStats& sp, const GaussianStats& spp, const EmbeddingBatch& zp,
                                        const EmbeddingBatch& zpp, double tau) {
  return infmasking_gaussian_bound(sp, spp, zp.z, zpp.z, tau);
}

// Statistics are estimated from the views and differentiated through.
inline GaussianMaskResult infmasking_gaussian_grad(const std::vector<MatrixD>& views_p,
                                                   const std::vector<MatrixD>& views_pp, const MatrixD& zp,
                                                   const MatrixD& zpp, double tau) {
  GaussianMaskResult r;
  const auto branch = [&](const std::vector<MatrixD>& views, const MatrixD& z, std::vector<MatrixD>& dv,
                          MatrixD& dz) {
    GaussianStats s = estimate_gaussian_stats(views);
    BoundResult b = gaussian_bound_branch(s, z, tau, true);
    r.value -= b.value;
    dv = gaussian_stats_backward(views, s, -b.d_mu, -b.d_var);
    dz = -b.d_targets;
  };
  branch(views_p, zp, r.d_views_p, r.d_zp);
  branch(views_pp, zpp, r.d_views_pp, r.d_zpp);
  return r;
}

// ---------------------------------------------------------------------------
// Total objective: lambda3 * L + lambda2 * sum_i L_i + lambda1 * L_mask.

struct LossInputs {
  MatrixD zp, zpp;
  std::vector<MatrixD> uni;
  std::vector<MatrixD> views_p, views_pp;
};

struct LossBreakdown {
  double cross = 0.0;     // L
  double unimodal = 0.0;  // sum_i L_i
  double mask = 0.0;      // L_InfMasking
  double total = 0.0;
};

struct LossGradients {
  MatrixD d_zp, d_zpp;
  std::vector<MatrixD> d_uni, d_views_p, d_views_pp;
};

inline LossBreakdown total_loss(const LossInputs& in, const LossConfig& cfg, LossGradients* grads = nullptr) {
  cfg.validate();
  const bool g = grads != nullptr;
  LossBreakdown out;
  CommResult c = comm_terms(in.zp, in.zpp, in.uni, cfg.tau, g);
  out.cross = c.cross;
  out.unimodal = c.unimodal;
  if (g) {
    grads->d_zp = cfg.lambda_cross * c.d_zp_cross + cfg.lambda_uni * c.d_zp;
    grads->d_zpp = cfg.lambda_cross * c.d_zpp_cross + cfg.lambda_uni * c.d_zpp;
    grads->d_uni.clear();
    for (auto& d : c.d_uni) grads->d_uni.push_back(cfg.lambda_uni * d);
    grads->d_views_p.clear();
    grads->d_views_pp.clear();
  }
  if (cfg.lambda_mask > 0.0) {
    if (cfg.estimator == Estimator::MonteCarlo) {
      MaskTermResult m = infmasking_mc_grad(in.views_p, in.views_pp, in.zp, in.zpp, cfg.tau, cfg.symmetric, g);
      out.mask = m.value;
      if (g) {
        grads->d_zp += cfg.lambda_mask * m.d_zp;
        grads->d_zpp += cfg.lambda_mask * m.d_zpp;
        for (auto& d : m.d_views_p) grads->d_views_p.push_back(cfg.lambda_mask * d);
        for (auto& d : m.d_views_pp) grads->d_views_pp.push_back(cfg.lambda_mask * d);
      }
    } else {
      GaussianMaskResult m = infmasking_gaussian_grad(in.views_p, in.views_pp, in.zp, in.zpp, cfg.tau);
      out.mask = m.value;
      if (g) {
        grads->d_zp += cfg.lambda_mask * m.d_zp;
        grads->d_zpp += cfg.lambda_mask * m.d_zpp;
        for (auto& d : m.d_views_p) grads->d_views_p.push_back(cfg.lambda_mask * d);
        for (auto& d : m.d_views_pp) grads->d_views_pp.push_back(cfg.lambda_mask * d);
      }
    }
  }
  out.total = cfg.lambda_cross * out.cross + cfg.lambda_uni * out.unimodal + cfg.lambda_mask * out.mask;
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian moment generating function E[exp(a'x)], x ~ N(mu, Sigma).

inline double mgf_gaussian(const VectorD& a, const VectorD& mu, const MatrixD& sigma) {
  require_shape(a.size() == mu.size(), "mgf: a and mu differ in length");
  if (sigma.rows() == 1 || sigma.cols() == 1) {
    // diagonal given as a vector
    VectorD d = Eigen::Map<const VectorD>(sigma.data(), sigma.size());
    require_shape(d.size() == a.size(), "mgf: diagonal length mismatch");
    if ((d.array() < 0.0).any()) throw ParameterError("mgf: covariance is not positive semidefinite");
    return std::exp(a.dot(mu) + 0.5 * a.cwiseAbs2().dot(d));
  }
  require_shape(sigma.rows() == a.size() && sigma.cols() == a.size(), "mgf: covariance shape mismatch");
  if (!sigma.isApprox(sigma.transpose(), 1e-12)) throw ParameterError("mgf: covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixD> es(sigma, Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-12 * scale) throw ParameterError("mgf: covariance is not positive semidefinite");
  return std::exp(a.dot(mu) + 0.5 * a.dot(sigma * a));
}

}  // namespace infmask::losses
