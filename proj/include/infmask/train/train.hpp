#pragma once

// Contrastive pre-training with masked fusion views, validation-based early
// stopping and per-seed aggregation.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "infmask/augment/pipeline.hpp"
#include "infmask/losses/losses.hpp"
#include "infmask/model/checkpoint.hpp"
#include "infmask/model/model.hpp"
#include "infmask/nn/adamw.hpp"
#include "infmask/probe/probe.hpp"
#include "infmask/trifeature/dataset.hpp"

namespace infmask::train {

// Where the unimodal embeddings Z_i come from: the raw sample (as written in
// the training procedure) or the first augmented branch.
enum class UnimodalSource { Raw, Augmented };

enum class Schedule { Constant, Cosine };

inline Schedule parse_schedule(const std::string& s) {
  if (s == "constant") return Schedule::Constant;
  if (s == "cosine") return Schedule::Cosine;
  throw ParameterError("schedule must be 'constant' or 'cosine', got '" + s + "'");
}

inline const char* schedule_name(Schedule s) { return s == Schedule::Constant ? "constant" : "cosine"; }

// Learning rate at step `t` of `total` (cosine decays to zero at the end).
inline double scheduled_lr(Schedule s, double base, long t, long total) {
  if (s == Schedule::Constant || total <= 1) return base;
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(total)));
}

struct TrainConfig {
  double lr = 3e-4;
  Schedule schedule = Schedule::Constant;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int epochs = 40;
  int batch_size = 128;
  int patience = 10;  // epochs without a validation gain
  int val_every = 5;  // epochs between validation probes (the last epoch is always probed)
  std::vector<std::uint64_t> seeds = {42, 43, 44, 45, 46};
  double val_fraction = 0.1;
  int checkpoint_every = 0;  // 0: keep only the best checkpoint
  UnimodalSource unimodal_source = UnimodalSource::Raw;
  losses::LossConfig loss;
  model::MaskSpec mask;
  model::ModelConfig model;
  augment::AugmentationPipeline augmentation = augment::AugmentationPipeline::standard(2);
  probe::ProbeOptions probe;

  void validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1, got " + std::to_string(epochs));
    if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2 (negatives required)");
    if (seeds.empty()) throw ConfigError("train.seeds must not be empty");
    if (patience < 1) throw ConfigError("train.patience must be >= 1");
    if (val_every < 1) throw ConfigError("train.val_every must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("train.val_fraction must lie in (0, 1)");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    try {
      loss.validate();
      model.validate();
      mask.validate(std::vector<int>(static_cast<std::size_t>(model.num_modalities), model.tokens_per_modality()),
                    model.token_dim);
      augmentation.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
    if (loss.lambda_mask > 0 && loss.estimator == losses::Estimator::GaussianBound && mask.views < 2)
      throw ConfigError("the gaussian estimator needs mask.views >= 2");
    if (augmentation.per_modality.size() != static_cast<std::size_t>(model.num_modalities))
      throw ConfigError("augmentation pipeline and model disagree on the number of modalities");
  }
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Pair data in memory: decoded images plus pair records indexing them.
struct PairData {
  const std::vector<Image>* images = nullptr;
  std::vector<trifeature::PairRecord> pairs;
};

inline std::vector<Image> render_images(const trifeature::Dataset& ds) {
  std::vector<Image> out;
  out.reserve(ds.instances.size());
  for (const auto& inst : ds.instances) out.push_back(trifeature::render_record(inst, ds.config.geometry).image);
  return out;
}

// Deterministic-math mode (INFMASK_DETERMINISTIC, default on): augmentation
// runs on the calling thread. When off, batch augmentation fans out over
// hardware threads. Every sample draws from its own seeded stream, so both
// modes produce identical results on a given build.
inline bool deterministic_mode() {
  const char* v = std::getenv("INFMASK_DETERMINISTIC");
  return v == nullptr || std::string(v) != "0";
}

struct StepLoss {
  long step = 0;
  losses::LossBreakdown loss;
};

struct EpochRecord {
  int epoch = 0;
  double train_total = 0, train_cross = 0, train_unimodal = 0, train_mask = 0;
  std::vector<probe::TaskScore> val;
  double val_mean = 0;
  double seconds = 0;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val = -1.0;
  model::InfMaskingModel best;
};

// One training run of the masked-fusion objective. The caller owns the model; the trainer
// updates it in place.
class Trainer {
 public:
  Trainer(model::InfMaskingModel& m, TrainConfig cfg, std::uint64_t seed)
      : model_(m),
        cfg_(std::move(cfg)),
        seed_(seed),
        params_(m.parameters()),
        opt_(params_, nn::AdamWOptions{cfg_.lr, cfg_.beta1, cfg_.beta2, 1e-8, cfg_.weight_decay}) {
    cfg_.validate();
  }

  const TrainConfig& config() const { return cfg_; }
  long steps() const { return opt_.steps(); }

  // Forward (and optionally backward) pass of one batch. `step_seed` fixes
  // augmentations and masks, so two calls with the same seed see the same
  // views.
  losses::LossBreakdown compute(const PairData& data, const std::vector<int>& batch, std::uint64_t step_seed,
                                bool backward) {
    const int n = static_cast<int>(batch.size());
    require(n >= 2, "training batch needs at least 2 pairs");
    const int nm = model_.config().num_modalities;
    const auto counts = model_.token_counts();

    // t', t'' and the two augmented branches
    std::vector<std::vector<Image>> views(2, std::vector<Image>(static_cast<std::size_t>(n * nm)));
    auto fill = [&](int k) {
      const auto& p = data.pairs[static_cast<std::size_t>(batch[static_cast<std::size_t>(k)])];
      augment::MultimodalSample x;
      x.modalities = {(*data.images)[static_cast<std::size_t>(p.inst1)], (*data.images)[static_cast<std::size_t>(p.inst2)]};
      for (int br = 0; br < 2; ++br) {
        auto y = augment::augment(x, cfg_.augmentation, derive_seed(step_seed, {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(br)}));
        for (int m = 0; m < nm; ++m)
          views[static_cast<std::size_t>(br)][static_cast<std::size_t>(m * n + k)] = std::move(*y.modalities[static_cast<std::size_t>(m)]);
      }
    };
    if (deterministic_mode()) {
      for (int k = 0; k < n; ++k) fill(k);
    } else {
      const int workers = std::max(1u, std::thread::hardware_concurrency());
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (int k = w; k < n; k += workers) fill(k);
        });
      for (auto& t : pool) t.join();
    }

    auto modality_batch = [&](int br, int m) {
      std::vector<const Image*> imgs;
      for (int k = 0; k < n; ++k) imgs.push_back(&views[static_cast<std::size_t>(br)][static_cast<std::size_t>(m * n + k)]);
      return model::image_batch(imgs);
    };

    // encoders: [branch][modality]; branch 2 is the raw sample for Z_i
    const bool raw_uni = cfg_.unimodal_source == UnimodalSource::Raw && cfg_.loss.lambda_uni > 0;
    const int nbranch = raw_uni ? 3 : 2;
    std::vector<std::vector<model::ConvEncoder::Cache>> enc_cache(static_cast<std::size_t>(nbranch),
                                                                  std::vector<model::ConvEncoder::Cache>(static_cast<std::size_t>(nm)));
    std::vector<std::vector<MatrixF>> tokens(static_cast<std::size_t>(nbranch), std::vector<MatrixF>(static_cast<std::size_t>(nm)));
    for (int br = 0; br < nbranch; ++br)
      for (int m = 0; m < nm; ++m) {
        MatrixF imgs;
        if (br < 2) {
          imgs = modality_batch(br, m);
        } else {
          std::vector<const Image*> raw;
          for (int k = 0; k < n; ++k) {
            const auto& p = data.pairs[static_cast<std::size_t>(batch[static_cast<std::size_t>(k)])];
            raw.push_back(&(*data.images)[static_cast<std::size_t>(m == 0 ? p.inst1 : p.inst2)]);
          }
          imgs = model::image_batch(raw);
        }
        tokens[static_cast<std::size_t>(br)][static_cast<std::size_t>(m)] =
            model_.encode(m, imgs, n, backward ? &enc_cache[static_cast<std::size_t>(br)][static_cast<std::size_t>(m)] : nullptr);
      }
    auto ptrs = [&](int br) {
      std::vector<const MatrixF*> p;
      for (auto& t : tokens[static_cast<std::size_t>(br)]) p.push_back(&t);
      return p;
    };

    std::vector<int> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);
    const std::vector<std::vector<int>> all(static_cast<std::size_t>(nm), ids);
    const auto full = model::full_plan(all, counts);

    using Cache = model::InfMaskingModel::FuseCache;
    Cache* no_cache = nullptr;
    std::vector<Cache> c_full(2), c_uni(static_cast<std::size_t>(nm));
    losses::LossInputs in;
    in.zp = model_.fuse(ptrs(0), full, backward ? &c_full[0] : no_cache).cast<double>();
    in.zpp = model_.fuse(ptrs(1), full, backward ? &c_full[1] : no_cache).cast<double>();
    const int uni_branch = raw_uni ? 2 : 0;
    if (cfg_.loss.lambda_uni > 0)
      for (int m = 0; m < nm; ++m) {
        std::vector<std::vector<int>> only(static_cast<std::size_t>(nm));
        only[static_cast<std::size_t>(m)] = ids;
        in.uni.push_back(model_.fuse(ptrs(uni_branch), model::full_plan(only, counts),
                                     backward ? &c_uni[static_cast<std::size_t>(m)] : no_cache)
                             .cast<double>());
      }
    std::vector<std::vector<Cache>> c_mask(2, std::vector<Cache>(static_cast<std::size_t>(cfg_.mask.views)));
    if (cfg_.loss.lambda_mask > 0)
      for (int br = 0; br < 2; ++br)
        for (int v = 0; v < cfg_.mask.views; ++v) {
          Rng rng(derive_seed(step_seed, {0x4d41534bULL, static_cast<std::uint64_t>(br), static_cast<std::uint64_t>(v)}));
          auto mp = model::masked_plan(all, counts, model_.config().token_dim, cfg_.mask, rng);
          MatrixD z = model_.fuse(ptrs(br), mp.plan, backward ? &c_mask[static_cast<std::size_t>(br)][static_cast<std::size_t>(v)] : no_cache)
                          .cast<double>();
          (br == 0 ? in.views_p : in.views_pp).push_back(std::move(z));
        }

    losses::LossGradients g;
    losses::LossBreakdown out = losses::total_loss(in, cfg_.loss, backward ? &g : nullptr);
    if (!std::isfinite(out.total)) {
      std::ostringstream os;
      os << "non-finite loss at step " << opt_.steps() << " (L=" << out.cross << ", sum_Li=" << out.unimodal
         << ", L_inf=" << out.mask << "); batch pair ids:";
      for (int k : batch) os << ' ' << data.pairs[static_cast<std::size_t>(k)].pair_id;
      throw TrainingError(os.str());
    }
    if (!backward) return out;

    nn::zero_grads(params_);
    std::vector<std::vector<MatrixF>> dtok(static_cast<std::size_t>(nbranch));
    for (int br = 0; br < nbranch; ++br)
      for (int m = 0; m < nm; ++m) {
        const auto& t = tokens[static_cast<std::size_t>(br)][static_cast<std::size_t>(m)];
        dtok[static_cast<std::size_t>(br)].push_back(MatrixF::Zero(t.rows(), t.cols()));
      }
    model_.fuse_backward(c_full[0], g.d_zp.cast<float>(), dtok[0]);
    model_.fuse_backward(c_full[1], g.d_zpp.cast<float>(), dtok[1]);
    for (std::size_t m = 0; m < g.d_uni.size(); ++m)
      model_.fuse_backward(c_uni[m], g.d_uni[m].cast<float>(), dtok[static_cast<std::size_t>(uni_branch)]);
    for (std::size_t v = 0; v < g.d_views_p.size(); ++v) {
      model_.fuse_backward(c_mask[0][v], g.d_views_p[v].cast<float>(), dtok[0]);
      model_.fuse_backward(c_mask[1][v], g.d_views_pp[v].cast<float>(), dtok[1]);
    }
    for (int br = 0; br < nbranch; ++br)
      for (int m = 0; m < nm; ++m)
        model_.encode_backward(m, enc_cache[static_cast<std::size_t>(br)][static_cast<std::size_t>(m)],
                               dtok[static_cast<std::size_t>(br)][static_cast<std::size_t>(m)]);
    return out;
  }

  void set_lr(double lr) { opt_.set_lr(lr); }

  losses::LossBreakdown step(const PairData& data, const std::vector<int>& batch, std::uint64_t step_seed) {
    auto out = compute(data, batch, step_seed, true);
    opt_.step();
    return out;
  }

  std::uint64_t step_seed(int epoch, int index) const {
    return derive_seed(seed_, {0x53544550ULL, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(index)});
  }

  // Minibatches of one epoch (shuffled, last partial batch dropped unless it
  // is the only one).
  std::vector<std::vector<int>> epoch_batches(int epoch, int num_pairs) const {
    std::vector<int> order(static_cast<std::size_t>(num_pairs));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed_, {0x45504f4348ULL, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<int>> out;
    const int bs = std::min(cfg_.batch_size, num_pairs);
    for (int s = 0; s + bs <= num_pairs; s += bs) out.emplace_back(order.begin() + s, order.begin() + s + bs);
    return out;
  }

 private:
  model::InfMaskingModel& model_;
  TrainConfig cfg_;
  std::uint64_t seed_;
  nn::ParamList params_;
  nn::AdamW opt_;
};

// Last val_fraction of the training pairs (in manifest order) is held out.
inline std::pair<std::vector<trifeature::PairRecord>, std::vector<trifeature::PairRecord>> split_validation(
    const std::vector<trifeature::PairRecord>& train, double fraction) {
  const auto nval = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(train.size())));
  require(nval >= 2 && nval + 2 <= train.size(), "validation split leaves too few pairs");
  std::vector<trifeature::PairRecord> fit(train.begin(), train.end() - static_cast<std::ptrdiff_t>(nval));
  std::vector<trifeature::PairRecord> val(train.end() - static_cast<std::ptrdiff_t>(nval), train.end());
  return {fit, val};
}

struct RunOutput {
  std::filesystem::path dir;  // empty: nothing written
  std::string run_id = "run";
  bool quiet = false;
};

namespace detail {

inline void write_metric(std::ostream& os, const std::string& run_id, std::uint64_t seed, int epoch,
                         const std::string& split, const std::string& metric, double value) {
  os << run_id << ',' << seed << ',' << epoch << ',' << split << ',' << metric << ',' << std::setprecision(10) << value
     << '\n';
}

}  // namespace detail

// Full training run on `train_pairs` with early stopping on the held-out
// tail. Returns per-epoch records and the best-validation model.
inline TrainResult train(const std::vector<Image>& images, const std::vector<trifeature::PairRecord>& train_pairs,
                         const TrainConfig& cfg, std::uint64_t seed, const RunOutput& out = {}) {
  cfg.validate();
  auto [fit_pairs, val_pairs] = split_validation(train_pairs, cfg.val_fraction);
  model::ModelConfig mc = cfg.model;
  mc.init_seed = derive_seed(seed, {0x494e4954ULL});
  if (!images.empty() && images.front().height != mc.image_size)
    throw ConfigError("model.image_size " + std::to_string(mc.image_size) + " does not match the dataset canvas " +
                      std::to_string(images.front().height));
  model::InfMaskingModel m(mc);
  Trainer trainer(m, cfg, seed);
  PairData data{&images, fit_pairs};

  std::ofstream metrics, steps;
  if (!out.dir.empty()) {
    std::filesystem::create_directories(out.dir);
    metrics.open(out.dir / "metrics.csv");
    metrics << "run_id,seed,epoch,split,metric,value\n";
    steps.open(out.dir / "loss_steps.csv");
    steps << "step,L,sum_Li,L_inf,total\n";
  }

  TrainResult result;
  result.best = m;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    const auto batches = trainer.epoch_batches(epoch, static_cast<int>(fit_pairs.size()));
    for (std::size_t b = 0; b < batches.size(); ++b) {
      trainer.set_lr(scheduled_lr(cfg.schedule, cfg.lr, trainer.steps(),
                                  static_cast<long>(cfg.epochs) * static_cast<long>(batches.size())));
      auto l = trainer.step(data, batches[b], trainer.step_seed(epoch, static_cast<int>(b)));
      rec.train_total += l.total;
      rec.train_cross += l.cross;
      rec.train_unimodal += l.unimodal;
      rec.train_mask += l.mask;
      if (steps.is_open())
        steps << trainer.steps() << ',' << std::setprecision(10) << l.cross << ',' << l.unimodal << ',' << l.mask << ','
              << l.total << '\n';
    }
    const double nb = static_cast<double>(batches.size());
    rec.train_total /= nb;
    rec.train_cross /= nb;
    rec.train_unimodal /= nb;
    rec.train_mask /= nb;

    const bool validate = epoch % cfg.val_every == 0 || epoch == cfg.epochs;
    if (validate) {
      auto ftr = probe::extract_features(m, images, fit_pairs, cfg.probe.features);
      auto fva = probe::extract_features(m, images, val_pairs, cfg.probe.features);
      rec.val = probe::probe_all(ftr, fva, seed, cfg.probe);
      for (const auto& s : rec.val) rec.val_mean += s.accuracy / static_cast<double>(rec.val.size());
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(rec);

    if (metrics.is_open()) {
      detail::write_metric(metrics, out.run_id, seed, epoch, "train", "loss_total", rec.train_total);
      detail::write_metric(metrics, out.run_id, seed, epoch, "train", "L", rec.train_cross);
      detail::write_metric(metrics, out.run_id, seed, epoch, "train", "sum_Li", rec.train_unimodal);
      detail::write_metric(metrics, out.run_id, seed, epoch, "train", "L_inf", rec.train_mask);
      for (const auto& s : rec.val) detail::write_metric(metrics, out.run_id, seed, epoch, "val", "acc_" + s.task, s.accuracy);
      if (validate) detail::write_metric(metrics, out.run_id, seed, epoch, "val", "acc_mean", rec.val_mean);
      metrics.flush();
      steps.flush();
    }
    if (!out.quiet) {
      std::ostringstream os;
      os << "[" << out.run_id << " seed " << seed << "] epoch " << epoch << " loss " << std::fixed
         << std::setprecision(4) << rec.train_total << " (L " << rec.train_cross << ", sum_Li " << rec.train_unimodal
         << ", L_inf " << rec.train_mask << ")";
      if (validate) os << " val";
      for (const auto& s : rec.val) os << ' ' << s.task << '=' << std::setprecision(3) << s.accuracy;
      os << " (" << std::setprecision(1) << rec.seconds << "s)\n";
      std::cerr << os.str();
    }

    if (validate && rec.val_mean > result.best_val) {
      result.best_val = rec.val_mean;
      result.best_epoch = epoch;
      result.best = m;
      since_best = 0;
      if (!out.dir.empty())
        model::save_checkpoint(out.dir / "best.ckpt", result.best,
                               {{"seed", std::to_string(seed)}, {"epoch", std::to_string(epoch)},
                                {"val_mean", std::to_string(rec.val_mean)}});
    } else if (validate && (since_best += cfg.val_every) >= cfg.patience) {
      break;
    }
    if (!out.dir.empty() && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
      model::save_checkpoint(out.dir / ("epoch_" + std::to_string(epoch) + ".ckpt"), m,
                             {{"seed", std::to_string(seed)}, {"epoch", std::to_string(epoch)}});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Seed aggregation

struct SeedScore {
  std::uint64_t seed = 0;
  std::string task;
  double accuracy = 0.0;
};

struct Aggregate {
  std::string task;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single seed
  int n = 0;
};

inline std::vector<Aggregate> aggregate(const std::vector<SeedScore>& scores) {
  std::vector<Aggregate> out;
  for (const auto& t : probe::probe_tasks()) {
    std::vector<double> v;
    for (const auto& s : scores)
      if (s.task == t.name) v.push_back(s.accuracy);
    if (v.empty()) continue;
    Aggregate a;
    a.task = t.name;
    a.n = static_cast<int>(v.size());
    a.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - a.mean) * (x - a.mean);
      a.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    out.push_back(a);
  }
  return out;
}

// Probes a trained model: fits on all training pairs, reports test accuracy.
inline std::vector<probe::TaskScore> evaluate(const model::InfMaskingModel& m, const std::vector<Image>& images,
                                              const std::vector<trifeature::PairRecord>& train_pairs,
                                              const std::vector<trifeature::PairRecord>& test_pairs,
                                              std::uint64_t seed, const probe::ProbeOptions& opt = {}) {
  auto ftr = probe::extract_features(m, images, train_pairs, opt.features);
  auto fte = probe::extract_features(m, images, test_pairs, opt.features);
  return probe::probe_all(ftr, fte, seed, opt);
}

struct SeedsResult {
  std::vector<SeedScore> scores;
  std::vector<Aggregate> summary;
};

// Trains and probes once per seed. Results table rows: model, task, seed,
// accuracy; the aggregate rows carry seed "mean" and "std".
inline SeedsResult run_seeds(const std::vector<Image>& images, const std::vector<trifeature::PairRecord>& train_pairs,
                             const std::vector<trifeature::PairRecord>& test_pairs, const TrainConfig& cfg,
                             const std::string& model_name, const std::filesystem::path& out_dir = {},
                             bool quiet = false) {
  cfg.validate();
  SeedsResult r;
  for (auto seed : cfg.seeds) {
    RunOutput ro;
    ro.run_id = model_name + "-s" + std::to_string(seed);
    ro.quiet = quiet;
    if (!out_dir.empty()) ro.dir = out_dir / ("seed_" + std::to_string(seed));
    auto tr = train(images, train_pairs, cfg, seed, ro);
    for (const auto& s : evaluate(tr.best, images, train_pairs, test_pairs, seed, cfg.probe))
      r.scores.push_back({seed, s.task, s.accuracy});
    if (!ro.dir.empty()) {
      std::ofstream m(ro.dir / "metrics.csv", std::ios::app);
      for (const auto& s : r.scores)
        if (s.seed == seed) detail::write_metric(m, ro.run_id, seed, tr.best_epoch, "test", "acc_" + s.task, s.accuracy);
    }
  }
  r.summary = aggregate(r.scores);
  if (!out_dir.empty()) {
    std::ofstream res(out_dir / "results.csv");
    res << "model,task,seed,accuracy\n";
    for (const auto& s : r.scores) res << model_name << ',' << s.task << ',' << s.seed << ',' << std::setprecision(10) << s.accuracy << '\n';
    for (const auto& a : r.summary) {
      res << model_name << ',' << a.task << ",mean," << std::setprecision(10) << a.mean << '\n';
      res << model_name << ',' << a.task << ",std," << std::setprecision(10) << a.stddev << '\n';
    }
  }
  return r;
}

}  // namespace infmask::train
