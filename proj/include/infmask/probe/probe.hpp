#pragma once

// Linear probing of frozen embeddings: multinomial logistic regression on
// standardised features, fitted full-batch with L-BFGS.

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>

#include "infmask/core/rng.hpp"
#include "infmask/core/types.hpp"
#include "infmask/model/model.hpp"
#include "infmask/trifeature/dataset.hpp"

namespace infmask::probe {

enum class TaskKind { Redundancy, Uniqueness1, Uniqueness2, Synergy };

struct ProbeTask {
  TaskKind kind;
  const char* name;
  int classes;

  double chance() const { return 1.0 / classes; }
  int label(const trifeature::PairRecord& p) const {
    switch (kind) {
      case TaskKind::Redundancy: return p.y_red;
      case TaskKind::Uniqueness1: return p.y_uni1;
      case TaskKind::Uniqueness2: return p.y_uni2;
      case TaskKind::Synergy: return p.y_syn;
    }
    return -1;
  }
};

inline const std::array<ProbeTask, 4>& probe_tasks() {
  static const std::array<ProbeTask, 4> tasks = {{{TaskKind::Redundancy, "redundancy", 10},
                                                  {TaskKind::Uniqueness1, "uniqueness_1", 10},
                                                  {TaskKind::Uniqueness2, "uniqueness_2", 10},
                                                  {TaskKind::Synergy, "synergy", 2}}};
  return tasks;
}

inline const ProbeTask& task_by_name(const std::string& name) {
  for (const auto& t : probe_tasks())
    if (name == t.name) return t;
  throw ParameterError("unknown probe task '" + name + "'");
}

// Which fused vector is probed: the CLS output of the fusion transformer or
// the projection-head output. Both are L2-normalised.
enum class FeatureSource { Fusion, Head };

inline FeatureSource parse_feature_source(const std::string& s) {
  if (s == "fusion") return FeatureSource::Fusion;
  if (s == "head") return FeatureSource::Head;
  throw ParameterError("probe features must be 'fusion' or 'head', got '" + s + "'");
}

inline const char* feature_source_name(FeatureSource f) { return f == FeatureSource::Fusion ? "fusion" : "head"; }

struct ProbeOptions {
  FeatureSource features = FeatureSource::Fusion;
  double l2 = 1e-4;
  double tolerance = 1e-6;
  int max_iterations = 1000;
};

struct LinearClassifier {
  MatrixD weight;  // features x classes
  VectorD bias;
  VectorD mean, inv_scale;
  int iterations = 0;
  bool converged = false;

  MatrixD logits(const MatrixD& x) const {
    MatrixD xs = (x.rowwise() - mean.transpose()).array().rowwise() * inv_scale.transpose().array();
    MatrixD l = xs * weight;
    l.rowwise() += bias.transpose();
    return l;
  }

  std::vector<int> predict(const MatrixD& x) const {
    MatrixD l = logits(x);
    std::vector<int> out(static_cast<std::size_t>(l.rows()));
    for (Eigen::Index i = 0; i < l.rows(); ++i) l.row(i).maxCoeff(&out[static_cast<std::size_t>(i)]);
    return out;
  }
};

namespace detail {

// Mean cross-entropy + l2/2 * |W|^2 over standardised features.
class SoftmaxObjective final : public ceres::FirstOrderFunction {
 public:
  SoftmaxObjective(const MatrixD& x, const std::vector<int>& y, int classes, double l2)
      : x_(x), y_(y), classes_(classes), l2_(l2) {}

  int NumParameters() const override { return static_cast<int>((x_.cols() + 1) * classes_); }

  bool Evaluate(const double* params, double* cost, double* gradient) const override {
    const Eigen::Index d = x_.cols(), n = x_.rows();
    Eigen::Map<const MatrixD> w(params, d, classes_);
    Eigen::Map<const Eigen::RowVectorXd> b(params + d * classes_, classes_);
    MatrixD l = x_ * w;
    l.rowwise() += b;
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = l.row(i).maxCoeff();
      l.row(i) = (l.row(i).array() - mx).exp();
      const double z = l.row(i).sum();
      total += -(std::log(l(i, y_[static_cast<std::size_t>(i)])) - std::log(z));
      l.row(i) /= z;
      l(i, y_[static_cast<std::size_t>(i)]) -= 1.0;
    }
    *cost = total / static_cast<double>(n) + 0.5 * l2_ * w.squaredNorm();
    if (gradient) {
      Eigen::Map<MatrixD> gw(gradient, d, classes_);
      Eigen::Map<Eigen::RowVectorXd> gb(gradient + d * classes_, classes_);
      gw = x_.transpose() * l / static_cast<double>(n) + l2_ * w;
      gb = l.colwise().sum() / static_cast<double>(n);
    }
    return std::isfinite(*cost);
  }

 private:
  const MatrixD& x_;
  const std::vector<int>& y_;
  int classes_;
  double l2_;
};

}  // namespace detail

inline LinearClassifier fit_linear(const MatrixD& x, const std::vector<int>& y, int classes, const ProbeOptions& opt,
                                   std::uint64_t seed) {
  require_shape(x.rows() == static_cast<Eigen::Index>(y.size()) && x.rows() > 0, "probe: features/labels mismatch");
  std::vector<int> seen(static_cast<std::size_t>(classes), 0);
  for (int v : y) {
    require(v >= 0 && v < classes, "probe: label " + std::to_string(v) + " outside [0, " + std::to_string(classes) + ")");
    seen[static_cast<std::size_t>(v)] = 1;
  }
  int distinct = 0;
  for (int s : seen) distinct += s;
  require(distinct >= 2, "probe: degenerate labels (a single class present)");

  LinearClassifier c;
  c.mean = x.colwise().mean().transpose();
  MatrixD centred = x.rowwise() - c.mean.transpose();
  VectorD sd = (centred.cwiseAbs2().colwise().sum() / static_cast<double>(x.rows())).cwiseSqrt().transpose();
  c.inv_scale = sd.unaryExpr([](double s) { return s > 1e-12 ? 1.0 / s : 0.0; });
  MatrixD xs = centred.array().rowwise() * c.inv_scale.transpose().array();

  const Eigen::Index d = x.cols();
  std::vector<double> params(static_cast<std::size_t>((d + 1) * classes), 0.0);
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 1e-3);
  for (Eigen::Index i = 0; i < d * classes; ++i) params[static_cast<std::size_t>(i)] = nd(rng);

  ceres::GradientProblem problem(new detail::SoftmaxObjective(xs, y, classes, opt.l2));
  ceres::GradientProblemSolver::Options o;
  o.line_search_direction_type = ceres::LBFGS;
  o.max_num_iterations = opt.max_iterations;
  o.function_tolerance = opt.tolerance * 1e-3;
  o.gradient_tolerance = opt.tolerance;
  o.parameter_tolerance = 1e-12;
  o.logging_type = ceres::SILENT;
  o.minimizer_progress_to_stdout = false;
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(o, problem, params.data(), &summary);

  c.weight = Eigen::Map<const MatrixD>(params.data(), d, classes);
  c.bias = Eigen::Map<const VectorD>(params.data() + d * classes, classes);
  c.iterations = static_cast<int>(summary.iterations.size());
  c.converged = summary.termination_type == ceres::CONVERGENCE;
  return c;
}

inline double accuracy(const LinearClassifier& c, const MatrixD& x, const std::vector<int>& y) {
  require_shape(x.rows() == static_cast<Eigen::Index>(y.size()) && x.rows() > 0, "probe: features/labels mismatch");
  const auto pred = c.predict(x);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += pred[i] == y[i];
  return static_cast<double>(hit) / static_cast<double>(y.size());
}

// Fits on (x_train, y_train) and reports top-1 accuracy on (x_test, y_test).
inline double linear_probe(const MatrixD& x_train, const std::vector<int>& y_train, const MatrixD& x_test,
                           const std::vector<int>& y_test, int classes, std::uint64_t seed,
                           const ProbeOptions& opt = {}) {
  return accuracy(fit_linear(x_train, y_train, classes, opt, seed), x_test, y_test);
}

// ---------------------------------------------------------------------------
// Frozen features

struct Features {
  MatrixD z;  // one fused embedding per pair
  std::vector<trifeature::PairRecord> pairs;

  std::vector<int> labels(const ProbeTask& t) const {
    std::vector<int> y;
    y.reserve(pairs.size());
    for (const auto& p : pairs) y.push_back(t.label(p));
    return y;
  }
};

// Fused, unmasked, unaugmented embeddings of every pair, in pair order.
inline Features extract_features(const model::InfMaskingModel& m, const std::vector<Image>& images,
                                 const std::vector<trifeature::PairRecord>& pairs,
                                 FeatureSource source = FeatureSource::Fusion, int batch = 256) {
  require(!pairs.empty(), "extract_features: no pairs");
  require(m.config().num_modalities == 2, "extract_features: pair datasets need a bimodal model");
  Features f;
  f.pairs = pairs;
  f.z.resize(static_cast<Eigen::Index>(pairs.size()),
             source == FeatureSource::Head ? m.config().embed_dim : m.config().token_dim);
  const auto counts = m.token_counts();
  for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(pairs.size(), start + static_cast<std::size_t>(batch));
    const int n = static_cast<int>(end - start);
    std::vector<const Image*> a, b;
    for (std::size_t i = start; i < end; ++i) {
      a.push_back(&images.at(static_cast<std::size_t>(pairs[i].inst1)));
      b.push_back(&images.at(static_cast<std::size_t>(pairs[i].inst2)));
    }
    for (const Image* img : a)
      require_shape(img->height == m.config().image_size, "extract_features: image size does not match model");
    MatrixF t0 = m.encode(0, model::image_batch(a), n, nullptr);
    MatrixF t1 = m.encode(1, model::image_batch(b), n, nullptr);
    std::vector<int> ids(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
    auto plan = model::full_plan({ids, ids}, counts);
    MatrixF z = source == FeatureSource::Head ? m.fuse({&t0, &t1}, plan, nullptr)
                                              : nn::l2_normalize(m.fuse_cls({&t0, &t1}, plan), nullptr);
    f.z.middleRows(static_cast<Eigen::Index>(start), n) = z.cast<double>();
  }
  return f;
}

struct TaskScore {
  std::string task;
  double accuracy = 0.0;
  double chance = 0.0;
};

inline std::vector<TaskScore> probe_all(const Features& train, const Features& test, std::uint64_t seed,
                                        const ProbeOptions& opt = {}) {
  std::vector<TaskScore> out;
  for (const auto& t : probe_tasks())
    out.push_back({t.name, linear_probe(train.z, train.labels(t), test.z, test.labels(t), t.classes, seed, opt),
                   t.chance()});
  return out;
}

}  // namespace infmask::probe
