#pragma once

// Brute-force verifiers. Everything here recomputes its reference with its own
// loops and its own random streams; the library is only ever the candidate.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "infmask/augment/pipeline.hpp"
#include "infmask/core/rng.hpp"
#include "infmask/core/types.hpp"
#include "infmask/losses/losses.hpp"
#include "infmask/model/model.hpp"
#include "infmask/model/ops.hpp"
#include "infmask/probe/probe.hpp"
#include "infmask/train/train.hpp"
#include "infmask/trifeature/dataset.hpp"

namespace infmask::oracle {

// How a report's tolerance is read.
enum class Tolerance { Absolute, Relative, AtMost };

struct OracleReport {
  std::string check;
  std::string instance;
  double reference = 0.0;
  double candidate = 0.0;
  double tolerance = 0.0;
  Tolerance kind = Tolerance::Absolute;
  bool pass = false;
  std::string note;
};

inline const char* tolerance_name(Tolerance t) {
  switch (t) {
    case Tolerance::Absolute: return "abs";
    case Tolerance::Relative: return "rel";
    case Tolerance::AtMost: return "<=";
  }
  return "?";
}

// Absolute: |c - r| <= tol. Relative: |c - r| <= tol * |r|. AtMost: c <= r + tol.
inline bool within(double reference, double candidate, double tol, Tolerance kind) {
  if (!std::isfinite(reference) || !std::isfinite(candidate)) return false;
  switch (kind) {
    case Tolerance::Absolute: return std::abs(candidate - reference) <= tol;
    case Tolerance::Relative: return std::abs(candidate - reference) <= tol * std::abs(reference);
    case Tolerance::AtMost: return candidate <= reference + tol;
  }
  return false;
}

inline OracleReport make_report(std::string check, std::string instance, double reference, double candidate,
                                double tol, Tolerance kind, std::string note = {}) {
  OracleReport r{std::move(check), std::move(instance), reference, candidate, tol, kind, false, std::move(note)};
  r.pass = within(reference, candidate, tol, kind);
  return r;
}

inline OracleReport failed_precondition(std::string check, const std::string& what) {
  OracleReport r;
  r.check = std::move(check);
  r.instance = "-";
  r.reference = r.candidate = std::nan("");
  r.note = "precondition error: " + what;
  return r;
}

// ---------------------------------------------------------------------------
// Monte-Carlo expectation

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
  long n = 0;
};

// Mean and standard error of eval(sample) over n fresh draws.
template <class Sample>
Estimate mc_expectation_oracle(const std::function<double(const Sample&)>& eval,
                               const std::function<Sample(Rng&)>& sampler, long n_samples, std::uint64_t seed) {
  if (n_samples < 100) throw ParameterError("mc_expectation_oracle: need at least 100 samples");
  Rng rng(derive_seed(seed, {0x4f5241434c45ULL}));
  // Welford
  double mean = 0.0, m2 = 0.0;
  for (long k = 1; k <= n_samples; ++k) {
    const double x = eval(sampler(rng));
    const double d = x - mean;
    mean += d / static_cast<double>(k);
    m2 += d * (x - mean);
  }
  Estimate e;
  e.n = n_samples;
  e.mean = mean;
  e.std_error = std::sqrt(std::max(0.0, m2 / static_cast<double>(n_samples - 1)) / static_cast<double>(n_samples));
  return e;
}

// ---------------------------------------------------------------------------
// Five-point central differences in float64 (truncation error O(h^4)).

inline VectorD finite_diff_grad(const std::function<double(const VectorD&)>& f, const VectorD& point,
                                double h = 1e-4) {
  if (!(h > 0.0)) throw ParameterError("finite_diff_grad: step must be > 0");
  if (!point.allFinite()) throw ParameterError("finite_diff_grad: point is not finite");
  VectorD x = point;
  VectorD g(point.size());
  auto at = [&](Eigen::Index i, double delta) {
    x(i) = point(i) + delta;
    const double v = f(x);
    x(i) = point(i);
    return v;
  };
  for (Eigen::Index i = 0; i < point.size(); ++i)
    g(i) = (at(i, -2 * h) - 8 * at(i, -h) + 8 * at(i, h) - at(i, 2 * h)) / (12.0 * h);
  return g;
}

// max_k |a_k - n_k| / max(|a_k|, |n_k|, floor)
inline double max_relative_error(const VectorD& analytic, const VectorD& numeric, double floor = 1e-6) {
  require_shape(analytic.size() == numeric.size(), "max_relative_error: size mismatch");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double den = std::max({std::abs(analytic(i)), std::abs(numeric(i)), floor});
    worst = std::max(worst, std::abs(analytic(i) - numeric(i)) / den);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Reference formulas (loops, long double accumulation)

namespace ref {

inline long double log_sum_exp(const std::vector<long double>& s) {
  long double mx = s[0];
  for (long double v : s) mx = std::max(mx, v);
  long double acc = 0.0L;
  for (long double v : s) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

// mean_i [ a_i.b_i/tau - log sum_j exp(a_i.b_j/tau) ]
inline double info_nce(const MatrixD& a, const MatrixD& b, double tau) {
  const Eigen::Index n = a.rows(), d = a.cols();
  long double total = 0.0L;
  std::vector<long double> s(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      long double dot = 0.0L;
      for (Eigen::Index c = 0; c < d; ++c) dot += static_cast<long double>(a(i, c)) * b(j, c);
      s[static_cast<std::size_t>(j)] = dot / tau;
    }
    total += s[static_cast<std::size_t>(i)] - log_sum_exp(s);
  }
  return static_cast<double>(total / n);
}

inline double comm(const MatrixD& zp, const MatrixD& zpp, const std::vector<MatrixD>& uni, double tau) {
  double v = -info_nce(zp, zpp, tau);
  for (const auto& u : uni) v -= 0.5 * (info_nce(u, zp, tau) + info_nce(u, zpp, tau));
  return v;
}

inline double mask_mc(const std::vector<MatrixD>& vp, const std::vector<MatrixD>& vpp, const MatrixD& zp,
                      const MatrixD& zpp, double tau) {
  long double acc = 0.0L;
  for (std::size_t k = 0; k < vp.size(); ++k) acc += info_nce(vp[k], zp, tau) + info_nce(vpp[k], zpp, tau);
  return static_cast<double>(-acc / static_cast<long double>(vp.size()));
}

// Empirical mean and unbiased per-entry variance over views.
inline std::pair<MatrixD, MatrixD> view_moments(const std::vector<MatrixD>& views) {
  const Eigen::Index n = views[0].rows(), d = views[0].cols();
  const auto k = static_cast<long double>(views.size());
  MatrixD mu(n, d), var(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index c = 0; c < d; ++c) {
      long double s = 0.0L;
      for (const auto& v : views) s += v(i, c);
      const long double m = s / k;
      long double q = 0.0L;
      for (const auto& v : views) q += (v(i, c) - m) * (v(i, c) - m);
      mu(i, c) = static_cast<double>(m);
      var(i, c) = static_cast<double>(q / (k - 1.0L));
    }
  return {mu, var};
}

}  // namespace ref

// ---------------------------------------------------------------------------
// Random instances

namespace detail {

inline MatrixD unit_rows(Eigen::Index n, Eigen::Index d, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  MatrixD m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  m.rowwise().normalize();
  return m;
}

inline std::vector<MatrixD> unit_views(int k, Eigen::Index n, Eigen::Index d, Rng& rng) {
  std::vector<MatrixD> v;
  for (int i = 0; i < k; ++i) v.push_back(unit_rows(n, d, rng));
  return v;
}

inline VectorD flatten(const std::vector<const MatrixD*>& parts) {
  Eigen::Index total = 0;
  for (const auto* p : parts) total += p->size();
  VectorD out(total);
  Eigen::Index off = 0;
  for (const auto* p : parts) {
    for (Eigen::Index r = 0; r < p->rows(); ++r)
      for (Eigen::Index c = 0; c < p->cols(); ++c) out(off++) = (*p)(r, c);
  }
  return out;
}

inline void unflatten(const VectorD& x, const std::vector<MatrixD*>& parts) {
  Eigen::Index off = 0;
  for (auto* p : parts)
    for (Eigen::Index r = 0; r < p->rows(); ++r)
      for (Eigen::Index c = 0; c < p->cols(); ++c) (*p)(r, c) = x(off++);
}

inline std::string shape_text(Eigen::Index n, Eigen::Index d, double tau) {
  std::ostringstream os;
  os << "N=" << n << " d=" << d << " tau=" << tau;
  return os.str();
}

// Even-odd ray casting, written independently of the renderer.
inline bool inside(const trifeature::Polygon& poly, double x, double y) {
  bool in = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = poly[i].x, yi = poly[i].y, xj = poly[j].x, yj = poly[j].y;
    if ((yi > y) == (yj > y)) continue;
    const double xcross = xi + (y - yi) * (xj - xi) / (yj - yi);
    if (x < xcross) in = !in;
  }
  return in;
}

inline model::ModelConfig tiny_model() {
  model::ModelConfig c;
  c.image_size = 16;
  c.conv_channels = {8, 16};
  c.token_dim = 16;
  c.heads = 4;
  c.head_hidden = 32;
  c.embed_dim = 16;
  c.init_seed = 77;
  return c;
}

inline Image noise_image(int size, Rng& rng) {
  Image img(size, size);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : img.pixels) v = u(rng);
  return img;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Individual checks

struct OracleOptions {
  double tau = 0.1;
  // Factor in front of z'^T Sigma z' / tau^2 in the Gaussian bound handed to
  // the Jensen check; anything other than 0.5 is a deliberate mutation.
  double bound_quadratic_factor = 0.5;
  std::uint64_t seed = 2024;
  bool quick = false;  // smaller sample counts for unit tests
  bool with_data = true;  // dataset and probe checks (render images)
};

using ReportList = std::vector<OracleReport>;

inline void check_oracle_plumbing(ReportList& out) {
  const auto e = mc_expectation_oracle<int>([](const int&) { return 3.0; }, [](Rng&) { return 0; }, 200, 1);
  out.push_back(make_report("mc_constant_stderr", "constant evaluator, n=200", 0.0, e.std_error, 0.0,
                            Tolerance::Absolute));
  std::function<double(const double&)> id = [](const double& x) { return x; };
  std::function<double(Rng&)> normal = [](Rng& r) { return std::normal_distribution<double>(0.0, 1.0)(r); };
  const auto a = mc_expectation_oracle(id, normal, 20000, 11);
  const auto b = mc_expectation_oracle(id, normal, 40000, 12);
  out.push_back(make_report("mc_clt_scaling", "N(0,1), n=20000 -> 40000", 1.0 / std::sqrt(2.0),
                            b.std_error / a.std_error, 0.2, Tolerance::Relative));

  VectorD x(2);
  x << 1.0, 2.0;
  const VectorD g = finite_diff_grad([](const VectorD& v) { return v.squaredNorm(); }, x);
  out.push_back(make_report("fd_quadratic", "f=|x|^2 at (1,2), d/dx1", 2.0, g(0), 1e-6, Tolerance::Absolute));
  out.push_back(make_report("fd_quadratic", "f=|x|^2 at (1,2), d/dx2", 4.0, g(1), 1e-6, Tolerance::Absolute));
  const VectorD z = finite_diff_grad([](const VectorD&) { return 5.0; }, x);
  out.push_back(make_report("fd_constant", "f=5", 0.0, z.cwiseAbs().maxCoeff(), 1e-8, Tolerance::Absolute));
}

inline void check_info_nce(ReportList& out, const OracleOptions& o) {
  // hand example: N=2, tau=1, orthonormal pairs
  MatrixD e = MatrixD::Identity(2, 2);
  out.push_back(make_report("infonce_enumeration", "N=2 tau=1 identity", 1.0 - std::log(std::exp(1.0) + 1.0),
                            losses::info_nce_grad(e, e, 1.0, false).value, 1e-12, Tolerance::Absolute));
  try {
    losses::check_tau(o.tau);
  } catch (const ParameterError& err) {
    out.push_back(failed_precondition("infonce_enumeration", err.what()));
    return;
  }
  Rng rng(derive_seed(o.seed, {1}));
  for (int t = 0; t < 10; ++t) {
    const Eigen::Index n = 2 + t % 7, d = 3 + t;
    MatrixD a = detail::unit_rows(n, d, rng), b = detail::unit_rows(n, d, rng);
    const double cand = losses::info_nce_grad(a, b, o.tau, false).value;
    out.push_back(make_report("infonce_enumeration", detail::shape_text(n, d, o.tau), ref::info_nce(a, b, o.tau),
                              cand, 1e-10, Tolerance::Absolute));
    // unit-norm rows: -2/tau - log N <= I <= 0
    const double floor = -2.0 / o.tau - std::log(static_cast<double>(n));
    out.push_back(make_report("infonce_range", detail::shape_text(n, d, o.tau) + " upper 0", 0.0, cand, 0.0,
                              Tolerance::AtMost));
    out.push_back(make_report("infonce_range", detail::shape_text(n, d, o.tau) + " lower bound as candidate", cand,
                              floor, 0.0, Tolerance::AtMost));
  }
}

inline void check_comm_identities(ReportList& out, const OracleOptions& o) {
  try {
    losses::check_tau(o.tau);
  } catch (const ParameterError& err) {
    out.push_back(failed_precondition("reduction_identity", err.what()));
    return;
  }
  Rng rng(derive_seed(o.seed, {2}));
  for (int t = 0; t < 10; ++t) {
    const Eigen::Index n = 2 + t % 6, d = 4 + 2 * (t % 4);
    losses::LossInputs in;
    in.zp = detail::unit_rows(n, d, rng);
    in.zpp = detail::unit_rows(n, d, rng);
    in.uni = detail::unit_views(2, n, d, rng);
    in.views_p = detail::unit_views(3, n, d, rng);
    in.views_pp = detail::unit_views(3, n, d, rng);
    const double reference = ref::comm(in.zp, in.zpp, in.uni, o.tau);

    losses::LossConfig cfg;
    cfg.tau = o.tau;
    cfg.lambda_mask = 0.0;
    cfg.lambda_uni = 1.0;
    cfg.lambda_cross = 1.0;
    out.push_back(make_report("reduction_identity", "(0,1,1) " + detail::shape_text(n, d, o.tau), reference,
                              losses::total_loss(in, cfg).total, 1e-9, Tolerance::Absolute));

    std::vector<losses::EmbeddingBatch> uni;
    for (const auto& u : in.uni) uni.push_back(losses::EmbeddingBatch::sequential(u));
    out.push_back(make_report("comm_compositional", detail::shape_text(n, d, o.tau), reference,
                              losses::comm_loss(losses::EmbeddingBatch::sequential(in.zp),
                                                losses::EmbeddingBatch::sequential(in.zpp), uni, o.tau, 2),
                              1e-9, Tolerance::Absolute));

    // weighted breakdown against independently evaluated terms
    cfg.lambda_mask = 0.3 + 0.1 * t;
    cfg.lambda_uni = 0.5;
    cfg.lambda_cross = 1.5;
    const auto b = losses::total_loss(in, cfg);
    const double cross = -ref::info_nce(in.zp, in.zpp, o.tau);
    const double uni_terms = reference - cross;
    const double mask = ref::mask_mc(in.views_p, in.views_pp, in.zp, in.zpp, o.tau);
    out.push_back(make_report("breakdown_sum", detail::shape_text(n, d, o.tau),
                              1.5 * cross + 0.5 * uni_terms + cfg.lambda_mask * mask, b.total, 1e-9,
                              Tolerance::Absolute));
    out.push_back(make_report("mask_mc_enumeration", detail::shape_text(n, d, o.tau), mask, b.mask, 1e-9,
                              Tolerance::Absolute));
  }
}

// Analytic gradients of the four losses against float64 central differences.
inline void check_gradients(ReportList& out, const OracleOptions& o) {
  try {
    losses::check_tau(o.tau);
  } catch (const ParameterError& err) {
    out.push_back(failed_precondition("gradient", err.what()));
    return;
  }
  constexpr double kTol = 1e-4;
  const double tau = o.tau;
  Rng rng(derive_seed(o.seed, {3}));
  for (int t = 0; t < 20; ++t) {
    const Eigen::Index n = 2 + t % 4, d = 4 + 4 * (t % 2);
    const std::string inst = detail::shape_text(n, d, tau) + " #" + std::to_string(t);
    MatrixD a = detail::unit_rows(n, d, rng), b = detail::unit_rows(n, d, rng);

    {  // info_nce
      auto g = losses::info_nce_grad(a, b, tau, true);
      MatrixD x = a, y = b;
      auto f = [&](const VectorD& v) {
        detail::unflatten(v, {&x, &y});
        return losses::info_nce_grad(x, y, tau, false).value;
      };
      const VectorD num = finite_diff_grad(f, detail::flatten({&a, &b}));
      const VectorD ana = detail::flatten({&g.d_anchors, &g.d_targets});
      out.push_back(make_report("gradient_info_nce", inst, 0.0, max_relative_error(ana, num), kTol,
                                Tolerance::AtMost));
    }

    std::vector<MatrixD> uni = detail::unit_views(2, n, d, rng);
    {  // CoMM objective
      auto c = losses::comm_terms(a, b, uni, tau, true);
      MatrixD x = a, y = b, u0 = uni[0], u1 = uni[1];
      auto f = [&](const VectorD& v) {
        detail::unflatten(v, {&x, &y, &u0, &u1});
        return losses::comm_terms(x, y, {u0, u1}, tau, false).value();
      };
      const VectorD num = finite_diff_grad(f, detail::flatten({&a, &b, &uni[0], &uni[1]}));
      MatrixD dzp = c.d_zp + c.d_zp_cross, dzpp = c.d_zpp + c.d_zpp_cross;
      const VectorD ana = detail::flatten({&dzp, &dzpp, &c.d_uni[0], &c.d_uni[1]});
      out.push_back(make_report("gradient_comm", inst, 0.0, max_relative_error(ana, num), kTol, Tolerance::AtMost));
    }

    std::vector<MatrixD> vp = detail::unit_views(3, n, d, rng), vpp = detail::unit_views(3, n, d, rng);
    {  // Monte-Carlo masking term
      auto m = losses::infmasking_mc_grad(vp, vpp, a, b, tau, false, true);
      std::vector<MatrixD> xp = vp, xpp = vpp;
      MatrixD x = a, y = b;
      auto f = [&](const VectorD& v) {
        detail::unflatten(v, {&xp[0], &xp[1], &xp[2], &xpp[0], &xpp[1], &xpp[2], &x, &y});
        return losses::infmasking_mc_grad(xp, xpp, x, y, tau, false, false).value;
      };
      const VectorD num = finite_diff_grad(f, detail::flatten({&vp[0], &vp[1], &vp[2], &vpp[0], &vpp[1], &vpp[2], &a, &b}));
      const VectorD ana = detail::flatten({&m.d_views_p[0], &m.d_views_p[1], &m.d_views_p[2], &m.d_views_pp[0],
                                           &m.d_views_pp[1], &m.d_views_pp[2], &m.d_zp, &m.d_zpp});
      out.push_back(make_report("gradient_infmasking_mc", inst, 0.0, max_relative_error(ana, num), kTol,
                                Tolerance::AtMost));
    }
    {  // Gaussian bound, statistics differentiated through
      auto m = losses::infmasking_gaussian_grad(vp, vpp, a, b, tau);
      std::vector<MatrixD> xp = vp, xpp = vpp;
      MatrixD x = a, y = b;
      auto f = [&](const VectorD& v) {
        detail::unflatten(v, {&xp[0], &xp[1], &xp[2], &xpp[0], &xpp[1], &xpp[2], &x, &y});
        return losses::infmasking_gaussian_bound(losses::estimate_gaussian_stats(xp),
                                                 losses::estimate_gaussian_stats(xpp), x, y, tau);
      };
      const VectorD num = finite_diff_grad(f, detail::flatten({&vp[0], &vp[1], &vp[2], &vpp[0], &vpp[1], &vpp[2], &a, &b}));
      const VectorD ana = detail::flatten({&m.d_views_p[0], &m.d_views_p[1], &m.d_views_p[2], &m.d_views_pp[0],
                                           &m.d_views_pp[1], &m.d_views_pp[2], &m.d_zp, &m.d_zpp});
      out.push_back(make_report("gradient_gaussian_bound", inst, 0.0, max_relative_error(ana, num), kTol,
                                Tolerance::AtMost));
    }
  }
}

// E[exp(a'x)] by sampling against the closed form.
inline void check_mgf(ReportList& out, const OracleOptions& o) {
  const long draws = o.quick ? 200000 : 1000000;
  Rng rng(derive_seed(o.seed, {4}));
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> uv(0.05, 0.5);
  for (int t = 0; t < 20; ++t) {
    const int d = 2 + t % 5;
    VectorD a(d), mu(d), var(d);
    for (int c = 0; c < d; ++c) {
      a(c) = 0.4 * nd(rng);
      mu(c) = 0.5 * nd(rng);
      var(c) = uv(rng);
    }
    Rng draw(derive_seed(o.seed, {0x4d4746ULL, static_cast<std::uint64_t>(t)}));
    long double acc = 0.0L;
    for (long k = 0; k < draws; ++k) {
      double dot = 0.0;
      for (int c = 0; c < d; ++c) dot += a(c) * (mu(c) + std::sqrt(var(c)) * nd(draw));
      acc += std::exp(static_cast<long double>(dot));
    }
    const double sampled = static_cast<double>(acc / static_cast<long double>(draws));
    MatrixD diag = var;
    out.push_back(make_report("mgf_sampling", "d=" + std::to_string(d) + " #" + std::to_string(t), sampled,
                              losses::mgf_gaussian(a, mu, diag), 0.01, Tolerance::Relative,
                              std::to_string(draws) + " draws"));
  }
}

// Gaussian bound (candidate) <= Monte-Carlo expectation of I_NCE over
// Gaussian views (reference) + 3 stderr.
inline ReportList jensen_reports(const OracleOptions& o, int instances) {
  ReportList out;
  try {
    losses::check_tau(o.tau);
  } catch (const ParameterError& err) {
    out.push_back(failed_precondition("jensen_bound", err.what()));
    return out;
  }
  const long draws = o.quick ? 20000 : 100000;
  const double tau = o.tau;
  Rng rng(derive_seed(o.seed, {5}));
  std::uniform_real_distribution<double> uv(0.0, 1.0);
  const int ns[] = {2, 4, 8}, ds[] = {4, 8, 16};
  for (int t = 0; t < instances; ++t) {
    const int n = ns[t % 3], d = ds[(t / 3) % 3];
    MatrixD targets = detail::unit_rows(n, d, rng);
    MatrixD mu = detail::unit_rows(n, d, rng) * 0.8;
    MatrixD var(n, d);
    // total variance per row around 0.1..0.5, spread over d entries
    for (Eigen::Index i = 0; i < var.size(); ++i) var.data()[i] = (0.1 + 0.4 * uv(rng)) * 2.0 * uv(rng) / d;

    losses::GaussianStats s;
    s.mu = mu;
    s.var_diag = var * (o.bound_quadratic_factor / 0.5);
    s.samples = 2;
    const double candidate = losses::gaussian_bound_branch(s, targets, tau, false).value;

    std::function<MatrixD(Rng&)> sampler = [&](Rng& r) {
      std::normal_distribution<double> nd(0.0, 1.0);
      MatrixD v(n, d);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index c = 0; c < d; ++c) v(i, c) = mu(i, c) + std::sqrt(var(i, c)) * nd(r);
      return v;
    };
    std::function<double(const MatrixD&)> eval = [&](const MatrixD& v) {
      // plain double loops; independent of the library's matrix form
      double total = 0.0;
      std::vector<double> sc(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        double mx = -1e300;
        for (int j = 0; j < n; ++j) {
          double dot = 0.0;
          for (int c = 0; c < d; ++c) dot += v(i, c) * targets(j, c);
          sc[static_cast<std::size_t>(j)] = dot / tau;
          mx = std::max(mx, sc[static_cast<std::size_t>(j)]);
        }
        double z = 0.0;
        for (double x : sc) z += std::exp(x - mx);
        total += sc[static_cast<std::size_t>(i)] - mx - std::log(z);
      }
      return total / n;
    };
    const Estimate e = mc_expectation_oracle(eval, sampler, draws, derive_seed(o.seed, {0x4a454eULL, static_cast<std::uint64_t>(t)}));
    std::ostringstream inst;
    inst << "N=" << n << " d=" << d << " #" << t;
    out.push_back(make_report("jensen_bound", inst.str(), e.mean, candidate, 3.0 * e.std_error, Tolerance::AtMost,
                              std::to_string(draws) + " draws, stderr " + std::to_string(e.std_error)));
  }
  return out;
}

inline void check_gaussian_closed_forms(ReportList& out, const OracleOptions& o) {
  // hand-computed unbiased moments
  std::vector<MatrixD> views(2, MatrixD(1, 2));
  views[0] << 1.0, 0.0;
  views[1] << 0.0, 1.0;
  const auto s = losses::estimate_gaussian_stats(views);
  out.push_back(make_report("unbiased_moments", "views (1,0),(0,1): mu_1", 0.5, s.mu(0, 0), 1e-15, Tolerance::Absolute));
  out.push_back(make_report("unbiased_moments", "views (1,0),(0,1): var_1", 0.5, s.var_diag(0, 0), 1e-15,
                            Tolerance::Absolute));
  out.push_back(make_report("unbiased_moments", "views (1,0),(0,1): var_2", 0.5, s.var_diag(0, 1), 1e-15,
                            Tolerance::Absolute));

  // z'.mu/tau = 5, Sigma = 0, one negative at similarity 0
  losses::GaussianStats c;
  c.mu = MatrixD(2, 2);
  c.mu << 5.0, 0.0, 0.0, 5.0;
  c.var_diag = MatrixD::Zero(2, 2);
  c.samples = 2;
  out.push_back(make_report("bound_closed_form", "score 5 vs negative 0, tau=1", 5.0 - std::log(std::exp(5.0) + 1.0),
                            losses::gaussian_bound_branch(c, MatrixD::Identity(2, 2), 1.0, false).value, 1e-12,
                            Tolerance::Absolute));

  try {
    losses::check_tau(o.tau);
  } catch (const ParameterError& err) {
    out.push_back(failed_precondition("degenerate_gaussian", err.what()));
    return;
  }
  Rng rng(derive_seed(o.seed, {6}));
  for (int t = 0; t < 10; ++t) {
    const Eigen::Index n = 2 + t % 5, d = 4 + t;
    MatrixD zp = detail::unit_rows(n, d, rng), zpp = detail::unit_rows(n, d, rng);
    MatrixD mp = detail::unit_rows(n, d, rng), mpp = detail::unit_rows(n, d, rng);
    losses::GaussianStats sp{mp, MatrixD::Zero(n, d), 2, std::nullopt};
    losses::GaussianStats spp{mpp, MatrixD::Zero(n, d), 2, std::nullopt};
    const double mc = losses::infmasking_mc_grad({mp}, {mpp}, zp, zpp, o.tau, false, false).value;
    out.push_back(make_report("degenerate_gaussian", "Sigma=0 " + detail::shape_text(n, d, o.tau), mc,
                              losses::infmasking_gaussian_bound(sp, spp, zp, zpp, o.tau), 1e-9, Tolerance::Absolute));
  }
}

// Exact mask sizes and uniform coverage.
inline void check_masks(ReportList& out, const OracleOptions& o) {
  struct Ratio {
    int num, den;
  };
  const Ratio ratios[] = {{1, 4}, {1, 2}, {7, 10}};
  const int samples = 10000;
  for (int tokens : {16, 20}) {
    for (const auto& r : ratios) {
      const double ratio = static_cast<double>(r.num) / r.den;
      const int expected = (r.num * tokens + r.den - 1) / r.den;  // integer ceil
      Rng rng(derive_seed(o.seed, {7, static_cast<std::uint64_t>(tokens), static_cast<std::uint64_t>(r.num)}));
      std::vector<int> hits(static_cast<std::size_t>(tokens), 0);
      int wrong = 0;
      for (int k = 0; k < samples; ++k) {
        const auto keep = model::sample_survivors(tokens, ratio, rng);
        std::vector<char> alive(static_cast<std::size_t>(tokens), 0);
        for (int i : keep) alive.at(static_cast<std::size_t>(i)) = 1;
        int masked = 0;
        for (int i = 0; i < tokens; ++i)
          if (!alive[static_cast<std::size_t>(i)]) {
            ++masked;
            ++hits[static_cast<std::size_t>(i)];
          }
        wrong += masked != expected;
      }
      std::ostringstream inst;
      inst << "T=" << tokens << " r=" << ratio << " (" << samples << " masks)";
      out.push_back(make_report("mask_exact_count", inst.str(), 0.0, wrong, 0.0, Tolerance::Absolute,
                                "expected " + std::to_string(expected) + " masked per draw"));
      // Per-position frequency is ceil(rT)/T. It equals r when rT is an
      // integer; otherwise the rounded target is checked under its own name.
      const double target = static_cast<double>(expected) / tokens;
      const bool exact = r.num * tokens % r.den == 0;
      double worst = 0.0;
      for (int h : hits) worst = std::max(worst, std::abs(static_cast<double>(h) / samples - target));
      out.push_back(make_report(exact ? "mask_frequency" : "mask_frequency_rounded", inst.str(), 0.0, worst, 0.02,
                                Tolerance::AtMost, "max deviation from " + std::to_string(target)));
    }
  }
  // counted through the fusion input: r=0.5, T=8
  Rng rng(derive_seed(o.seed, {8}));
  const auto mp = model::masked_plan({{0, 1}, {0, 1}}, {8, 8}, 16, model::MaskSpec{0.5, 1, model::MaskMode::Token}, rng);
  out.push_back(make_report("mask_fusion_count", "T=8 r=0.5, modality 1 survivors", 4.0, mp.plan.counts[0], 0.0,
                            Tolerance::Absolute));
  out.push_back(make_report("mask_fusion_count", "T=8 r=0.5, modality 2 survivors", 4.0, mp.plan.counts[1], 0.0,
                            Tolerance::Absolute));
}

inline void check_dataset(ReportList& out, const OracleOptions& o) {
  // mapping grid
  const auto mapping = trifeature::SynergyMapping::from_seed(o.seed);
  int positives = 0;
  for (int t = 0; t < trifeature::kNumCategories; ++t)
    for (int c = 0; c < trifeature::kNumCategories; ++c) positives += trifeature::synergy_label(t, c, mapping);
  out.push_back(make_report("mapping_grid", "10x10 (texture, colour) grid", 10.0, positives, 0.0, Tolerance::Absolute));

  // reference-scale counts and balance
  const auto ref_cfg = trifeature::DatasetConfig::reference(o.seed);
  const auto ds = trifeature::build_dataset(ref_cfg);
  std::vector<int> combos(ds.train_combination_ids);
  combos.insert(combos.end(), ds.test_combination_ids.begin(), ds.test_combination_ids.end());
  std::sort(combos.begin(), combos.end());
  const auto distinct = std::unique(combos.begin(), combos.end()) - combos.begin();
  out.push_back(make_report("dataset_counts", "reference: distinct combinations", 1000.0, static_cast<double>(distinct), 0.0,
                            Tolerance::Absolute));
  out.push_back(make_report("dataset_counts", "reference: train combinations", 800.0,
                            static_cast<double>(ds.train_combination_ids.size()), 0.0, Tolerance::Absolute));
  out.push_back(make_report("dataset_counts", "reference: test combinations", 200.0,
                            static_cast<double>(ds.test_combination_ids.size()), 0.0, Tolerance::Absolute));
  out.push_back(make_report("dataset_counts", "reference: train pairs", 10000.0, static_cast<double>(ds.train.size()),
                            0.0, Tolerance::Absolute));
  out.push_back(make_report("dataset_counts", "reference: test pairs", 4096.0, static_cast<double>(ds.test.size()),
                            0.0, Tolerance::Absolute));
  for (const auto* split : {&ds.train, &ds.test}) {
    double pos = 0.0;
    for (const auto& p : *split) pos += p.y_syn;
    out.push_back(make_report("synergy_balance",
                              std::string("reference ") + (split == &ds.train ? "train" : "test") + " pairs", 0.5,
                              pos / static_cast<double>(split->size()), 0.02, Tolerance::Absolute));
  }
  // recomputed labels from the factor records
  int mismatched = 0;
  for (const auto* split : {&ds.train, &ds.test})
    for (const auto& p : *split) {
      mismatched += p.f1.shape != p.f2.shape || p.y_red != p.f1.shape || p.y_uni1 != p.f1.texture ||
                    p.y_uni2 != p.f2.texture || p.y_syn != (ds.mapping.color_for(p.f1.texture) == p.f2.color);
    }
  out.push_back(make_report("pair_labels", "reference: labels recomputed from factors", 0.0, mismatched, 0.0,
                            Tolerance::Absolute));
  // determinism
  const auto again = trifeature::build_dataset(ref_cfg);
  out.push_back(make_report("dataset_determinism", "reference: manifest hash, same seed", 1.0,
                            io::git_blob_hash(trifeature::manifest_csv(ds)) ==
                                    io::git_blob_hash(trifeature::manifest_csv(again))
                                ? 1.0
                                : 0.0,
                            0.0, Tolerance::Absolute));
}


// Shape masks against an independent rasteriser of the template polygons.
inline void check_render(ReportList& out) {
  const auto geom = trifeature::CanvasGeometry::desk();
  const double half = geom.bbox / 2.0;
  for (double angle : {0.0, 30.0}) {
    int mismatched = 0, area = 0;
    for (int shape = 0; shape < trifeature::kNumCategories; ++shape) {
      trifeature::Pose pose;
      pose.rotation_shape = angle;
      pose.offset_x = pose.offset_y = (geom.canvas - geom.bbox) / 2;
      const auto r = trifeature::render_with_pose({shape, 0, 0}, pose, geom);
      const auto poly = trifeature::shape_polygon(shape);
      const double th = angle * std::acos(-1.0) / 180.0;
      for (int py = 0; py < geom.canvas; ++py)
        for (int px = 0; px < geom.canvas; ++px) {
          bool expect = false;
          if (px >= pose.offset_x && px < pose.offset_x + geom.bbox && py >= pose.offset_y &&
              py < pose.offset_y + geom.bbox) {
            const double dx = px + 0.5 - (pose.offset_x + half), dy = py + 0.5 - (pose.offset_y + half);
            // rotate the pixel back by -angle
            const double sx = (std::cos(th) * dx + std::sin(th) * dy) / half;
            const double sy = (-std::sin(th) * dx + std::cos(th) * dy) / half;
            expect = detail::inside(poly, sx, sy);
          }
          area += expect;
          mismatched += expect != (r.shape_mask.at(py, px) != 0);
        }
    }
    std::ostringstream inst;
    inst << "10 shapes, rotation " << angle << " deg, " << area << " px";
    // points exactly on an edge may go either way
    out.push_back(make_report("template_render", inst.str(), 0.0, mismatched, 2.0, Tolerance::AtMost));
  }
}

inline void check_augment_contract(ReportList& out, const OracleOptions& o) {
  Rng rng(derive_seed(o.seed, {9}));
  const auto pipe = augment::AugmentationPipeline::standard(2);
  int changed = 0, bad_projection = 0;
  for (int k = 0; k < 20; ++k) {
    augment::MultimodalSample x;
    const auto f1 = trifeature::FactorLabel::from_combination(static_cast<int>(uniform_index(rng, 1000)));
    const auto f2 = trifeature::FactorLabel::from_combination(static_cast<int>(uniform_index(rng, 1000)));
    x.modalities = {trifeature::render_instance(f1, rng(), trifeature::CanvasGeometry::desk()).image,
                    trifeature::render_instance(f2, rng(), trifeature::CanvasGeometry::desk()).image};
    x.labels = {f1, f2};
    changed += augment::augment(x, pipe, rng()).labels != x.labels;
    for (std::size_t i = 0; i < 2; ++i) {
      const auto p = augment::project(x, i);
      bad_projection += p.labels != x.labels || !p.has(i) || p.has(1 - i) || !(*p.modalities[i] == *x.modalities[i]);
    }
  }
  out.push_back(make_report("augment_labels", "20 samples, standard pipeline", 0.0, changed, 0.0, Tolerance::Absolute));
  out.push_back(make_report("projection", "20 samples x 2 modalities", 0.0, bad_projection, 0.0, Tolerance::Absolute));

  model::ModelConfig desk;
  out.push_back(make_report("projection_tokens", "desk model: tokens per modality", 16.0, desk.tokens_per_modality(),
                            0.0, Tolerance::Absolute));
  model::InfMaskingModel m(detail::tiny_model());
  const int t = m.tokens_per_modality();
  const auto plan = model::full_plan({{}, {0, 1, 2}}, m.token_counts());
  out.push_back(make_report("projection_tokens", "tiny model: fused length of a projected sample", t, plan.length(), 0.0,
                            Tolerance::Absolute));
}

inline MatrixF random_tokens(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<float> nd(0.0f, 1.0f);
  MatrixF m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

inline void check_model(ReportList& out, const OracleOptions& o) {
  model::InfMaskingModel m(detail::tiny_model());
  const int t = m.tokens_per_modality(), w = m.config().token_dim, b = 4;
  Rng rng(derive_seed(o.seed, {10}));
  MatrixF t0 = random_tokens(b * t, w, rng), t1 = random_tokens(b * t, w, rng);
  const std::vector<int> ids = {0, 1, 2, 3};
  auto plan = model::full_plan({ids, ids}, m.token_counts());
  const MatrixF z = m.fuse({&t0, &t1}, plan, nullptr);

  // shuffle tokens inside every (sequence, modality) segment
  auto shuffled = plan;
  const int length = plan.length();
  for (int s = 0; s < b; ++s) {
    auto first = shuffled.src_rows.begin() + static_cast<std::ptrdiff_t>(s) * length;
    std::shuffle(first, first + t, rng);
    std::shuffle(first + t, first + 2 * t, rng);
  }
  const MatrixF zs = m.fuse({&t0, &t1}, shuffled, nullptr);
  out.push_back(make_report("cls_permutation", "tiny model, 4 sequences", 0.0, (z - zs).cwiseAbs().maxCoeff(), 1e-5,
                            Tolerance::AtMost));
  const MatrixF again = m.fuse({&t0, &t1}, plan, nullptr);
  out.push_back(make_report("eval_determinism", "tiny model, repeated fusion", 0.0, (z - again).cwiseAbs().maxCoeff(),
                            0.0, Tolerance::Absolute));

  // Monte-Carlo masking term: a 1000-view library estimate against an
  // independent 1000-view per-view average.
  const int views = o.quick ? 300 : 1000;
  const MatrixD zd = z.cast<double>();
  const model::MaskSpec spec{0.5, 1, model::MaskMode::Token};
  auto draw_views = [&](std::uint64_t stream) {
    std::vector<MatrixD> vs;
    Rng r(stream);
    for (int k = 0; k < views; ++k)
      vs.push_back(m.fuse({&t0, &t1}, model::masked_plan({ids, ids}, m.token_counts(), w, spec, r).plan, nullptr)
                       .cast<double>());
    return vs;
  };
  const auto a = draw_views(derive_seed(o.seed, {11}));
  const auto c = draw_views(derive_seed(o.seed, {12}));
  const double lib = losses::infmasking_mc_grad(a, a, zd, zd, o.tau, false, false).value;
  double mean = 0.0, sq = 0.0;
  for (const auto& v : c) {
    const double x = -2.0 * ref::info_nce(v, zd, o.tau);
    mean += x;
    sq += x * x;
  }
  mean /= views;
  const double se = std::sqrt(std::max(0.0, sq / views - mean * mean) / views);
  out.push_back(make_report("mc_convergence", "tiny model, M'=" + std::to_string(views) + " r=0.5", mean, lib,
                            3.0 * std::sqrt(2.0) * se + 1e-12, Tolerance::Absolute,
                            "per-view stderr " + std::to_string(se)));
}

// Probe on shuffled labels must stay near chance on held-out data.
inline void check_probe_null(ReportList& out, const OracleOptions& o) {
  Rng rng(derive_seed(o.seed, {13}));
  const int ntr = 500, nte = o.quick ? 1000 : 2000, d = 16, classes = 10;
  std::normal_distribution<double> nd(0.0, 1.0);
  MatrixD xtr(ntr, d), xte(nte, d);
  for (Eigen::Index i = 0; i < xtr.size(); ++i) xtr.data()[i] = nd(rng);
  for (Eigen::Index i = 0; i < xte.size(); ++i) xte.data()[i] = nd(rng);
  // labels are a function of the features, then permuted on the train side
  auto label = [&](const MatrixD& x, Eigen::Index i) {
    return static_cast<int>(std::floor((std::atan2(x(i, 1), x(i, 0)) + std::acos(-1.0)) / (2 * std::acos(-1.0)) * classes)) % classes;
  };
  std::vector<int> ytr(ntr), yte(nte);
  for (int i = 0; i < ntr; ++i) ytr[static_cast<std::size_t>(i)] = label(xtr, i);
  for (int i = 0; i < nte; ++i) yte[static_cast<std::size_t>(i)] = label(xte, i);
  std::shuffle(ytr.begin(), ytr.end(), rng);
  const double acc = probe::linear_probe(xtr, ytr, xte, yte, classes, o.seed);
  out.push_back(make_report("probe_null", "10 classes, permuted training labels", 0.1, acc, 0.03, Tolerance::Absolute));
}

// A few optimiser steps on one fixed batch must lower its loss.
inline void check_learning(ReportList& out, const OracleOptions& o) {
  train::TrainConfig cfg;
  cfg.model = detail::tiny_model();
  cfg.lr = 1e-3;
  cfg.batch_size = 8;
  cfg.mask.views = 2;
  cfg.augmentation = augment::AugmentationPipeline::identity(2);
  Rng rng(derive_seed(o.seed, {14}));
  std::vector<Image> images;
  std::vector<trifeature::PairRecord> pairs;
  for (int i = 0; i < 8; ++i) {
    images.push_back(detail::noise_image(16, rng));
    images.push_back(detail::noise_image(16, rng));
    trifeature::PairRecord p;
    p.inst1 = 2 * i;
    p.inst2 = 2 * i + 1;
    pairs.push_back(p);
  }
  model::InfMaskingModel m(cfg.model);
  train::Trainer tr(m, cfg, o.seed);
  train::PairData data{&images, pairs};
  std::vector<int> batch(8);
  std::iota(batch.begin(), batch.end(), 0);
  const double before = tr.compute(data, batch, 1, false).total;
  for (int k = 0; k < 5; ++k) tr.step(data, batch, 1);
  const double after = tr.compute(data, batch, 1, false).total;
  out.push_back(make_report("one_step_learning", "tiny model, 5 steps on a fixed batch", before, after, 0.0,
                            Tolerance::AtMost, "loss must not rise"));
  out.back().pass = out.back().pass && after < before;
}

inline void check_aggregate(ReportList& out) {
  const auto a = train::aggregate({{1, "synergy", 0.5}, {2, "synergy", 0.7}});
  out.push_back(make_report("aggregate", "mean of {0.5, 0.7}", 0.6, a.at(0).mean, 1e-12, Tolerance::Absolute));
  out.push_back(make_report("aggregate", "sample std of {0.5, 0.7}", std::sqrt(0.02), a.at(0).stddev, 1e-12,
                            Tolerance::Absolute));
}

// ---------------------------------------------------------------------------

inline ReportList verify_all(const OracleOptions& o = {}) {
  ReportList out;
  // A check that trips over bad options becomes a failing row.
  auto run = [&](const char* name, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      out.push_back(failed_precondition(name, e.what()));
    }
  };
  run("oracle_plumbing", [&] { check_oracle_plumbing(out); });
  run("infonce", [&] { check_info_nce(out, o); });
  run("comm", [&] { check_comm_identities(out, o); });
  run("gradient", [&] { check_gradients(out, o); });
  run("mgf_sampling", [&] { check_mgf(out, o); });
  run("jensen_bound", [&] {
    for (auto& r : jensen_reports(o, o.quick ? 12 : 50)) out.push_back(std::move(r));
  });
  run("gaussian_closed_form", [&] { check_gaussian_closed_forms(out, o); });
  run("masks", [&] { check_masks(out, o); });
  run("augment", [&] { check_augment_contract(out, o); });
  run("model", [&] { check_model(out, o); });
  run("aggregate", [&] { check_aggregate(out); });
  if (o.with_data) {
    run("dataset", [&] { check_dataset(out, o); });
    run("template_render", [&] { check_render(out); });
    run("probe_null", [&] { check_probe_null(out, o); });
    run("one_step_learning", [&] { check_learning(out, o); });
  }
  return out;
}

inline bool all_pass(const ReportList& r) {
  return std::all_of(r.begin(), r.end(), [](const OracleReport& x) { return x.pass; });
}

inline std::string format_table(const ReportList& reports) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "check" << std::setw(46) << "instance" << std::right << std::setw(14)
     << "reference" << std::setw(14) << "candidate" << std::setw(11) << "tol" << "  result\n";
  for (const auto& r : reports) {
    os << std::left << std::setw(24) << r.check << std::setw(46) << r.instance.substr(0, 45) << std::right
       << std::setprecision(6) << std::setw(14) << r.reference << std::setw(14) << r.candidate << std::setw(4)
       << tolerance_name(r.kind) << std::setw(7) << std::setprecision(2) << r.tolerance << "  "
       << (r.pass ? "PASS" : "FAIL");
    if (!r.note.empty()) os << "  (" << r.note << ')';
    os << '\n';
  }
  const auto passed = std::count_if(reports.begin(), reports.end(), [](const OracleReport& x) { return x.pass; });
  os << passed << '/' << reports.size() << " checks passed\n";
  return os.str();
}

inline std::string to_csv(const ReportList& reports) {
  std::ostringstream os;
  os << "check,instance,reference,candidate,tolerance,kind,pass,note\n" << std::setprecision(12);
  auto q = [](const std::string& s) {
    std::string r = "\"";
    for (char c : s) r += c == '"' ? std::string("\"\"") : std::string(1, c);
    return r + '"';
  };
  for (const auto& r : reports)
    os << r.check << ',' << q(r.instance) << ',' << r.reference << ',' << r.candidate << ',' << r.tolerance << ','
       << tolerance_name(r.kind) << ',' << (r.pass ? 1 : 0) << ',' << q(r.note) << '\n';
  return os.str();
}

}  // namespace infmask::oracle
