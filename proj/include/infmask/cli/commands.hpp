#pragma once

// Subcommands behind the `infmask` executable. Each returns a process exit
// code and writes only below its run directory.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "infmask/config/config.hpp"
#include "infmask/oracle/oracle.hpp"
#include "infmask/probe/ablation.hpp"
#include "infmask/train/train.hpp"
#include "infmask/trifeature/dataset.hpp"

namespace infmask::cli {

namespace fs = std::filesystem;

struct CommandOptions {
  fs::path config;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::uint64_t> data_seed;
  std::optional<fs::path> out;
  bool force = false;
  std::optional<std::string> estimator;
  std::optional<int> views;
  std::optional<double> ratio;
  // ablate
  std::string axis;
  std::vector<std::string> values;
  // probe
  std::vector<fs::path> checkpoints;
  // verify
  bool quick = false;
  bool quiet = false;
};

inline config::ExperimentConfig resolve_config(const CommandOptions& o) {
  config::ExperimentConfig c = o.config.empty() ? config::ExperimentConfig{} : config::load_config(o.config);
  if (o.config.empty()) c.train.model.image_size = c.data.geometry.canvas;
  if (o.seeds) c.train.seeds = *o.seeds;
  if (o.data_seed) c.data.seed = *o.data_seed;
  if (o.out) c.output_dir = *o.out;
  if (o.estimator) config::set_key(c, "loss.estimator", *o.estimator);
  if (o.views) c.train.mask.views = *o.views;
  if (o.ratio) c.train.mask.ratio = *o.ratio;
  c.validate();
  return c;
}

// Creates `dir`, refusing a non-empty one unless `force` (files are then
// overwritten in place; nothing is deleted).
inline void prepare_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
  fs::create_directories(dir);
}

struct DataBundle {
  std::vector<Image> images;
  std::vector<trifeature::PairRecord> train, test;
  std::string manifest_hash;
  std::string source;  // directory or "generated"
};

// Reads data.dir when it holds a dataset, otherwise generates in memory.
inline DataBundle load_data(const config::ExperimentConfig& c) {
  DataBundle b;
  if (!c.data_dir.empty() && fs::exists(c.data_dir / "manifest.csv")) {
    auto ld = trifeature::load_dataset(c.data_dir);
    if (ld.canvas() != c.data.geometry.canvas)
      throw ConfigError("data.dir holds " + std::to_string(ld.canvas()) + " px images but data.canvas is " +
                        std::to_string(c.data.geometry.canvas));
    b.images = std::move(ld.images);
    b.train = std::move(ld.train);
    b.test = std::move(ld.test);
    b.manifest_hash = ld.manifest_hash;
    b.source = c.data_dir.string();
    return b;
  }
  if (!c.data_dir.empty()) throw ConfigError("data.dir " + c.data_dir.string() + " has no manifest.csv (run gen-data)");
  auto ds = trifeature::build_dataset(c.data);
  b.images = train::render_images(ds);
  b.train = ds.train;
  b.test = ds.test;
  b.manifest_hash = io::git_blob_hash(trifeature::manifest_csv(ds));
  b.source = "generated";
  return b;
}

// ---------------------------------------------------------------------------
// Acceptance thresholds reported in summary.txt

struct Threshold {
  std::string task;
  bool at_least;  // true: accuracy >= value; false: accuracy <= value
  double value;
};

inline bool is_cross_only(const train::TrainConfig& t) {
  return t.loss.lambda_mask == 0.0 && t.loss.lambda_uni == 0.0 && t.loss.lambda_cross > 0.0;
}

inline bool is_full_infmasking(const train::TrainConfig& t) {
  return t.loss.lambda_mask > 0.0 && t.loss.lambda_uni > 0.0 && t.loss.lambda_cross > 0.0;
}

// Desk-scale targets: InfMasking R >= 95, U >= 70, S >= 60; cross-only S <= 55.
inline std::vector<Threshold> thresholds_for(const train::TrainConfig& t) {
  if (is_full_infmasking(t)) return {{"redundancy", true, 0.95}, {"uniqueness_1", true, 0.70}, {"synergy", true, 0.60}};
  if (is_cross_only(t)) return {{"synergy", false, 0.55}};
  return {};
}

inline std::string summary_text(const std::string& title, const std::vector<train::Aggregate>& agg,
                                const std::vector<Threshold>& th) {
  std::ostringstream os;
  os << title << "\n\n" << std::fixed;
  os << "task            mean    std     n\n";
  for (const auto& a : agg)
    os << std::left << std::setw(14) << a.task << std::right << std::setprecision(4) << std::setw(8) << a.mean
       << std::setw(8) << a.stddev << std::setw(6) << a.n << '\n';
  if (th.empty()) {
    os << "\nno acceptance thresholds apply to this loss-weight setting\n";
    return os.str();
  }
  os << "\nthresholds\n";
  for (const auto& t : th) {
    double mean = std::nan("");
    for (const auto& a : agg)
      if (a.task == t.task) mean = a.mean;
    const bool ok = t.at_least ? mean >= t.value : mean <= t.value;
    os << std::left << std::setw(14) << t.task << (t.at_least ? " >= " : " <= ") << std::setprecision(2) << t.value
       << "  got " << std::setprecision(4) << mean << "  " << (ok ? "PASS" : "FAIL") << '\n';
  }
  return os.str();
}

inline void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

// ---------------------------------------------------------------------------

inline int cmd_gen_data(const CommandOptions& o) {
  auto c = resolve_config(o);
  const fs::path dir = o.out ? *o.out : (!c.data_dir.empty() ? c.data_dir : c.output_dir / "data");
  auto ds = trifeature::build_dataset(c.data);
  trifeature::write_dataset(ds, dir, o.force);
  double pos_train = 0, pos_test = 0;
  for (const auto& p : ds.train) pos_train += p.y_syn;
  for (const auto& p : ds.test) pos_test += p.y_syn;
  std::cout << "dataset        " << dir.string() << '\n'
            << "combinations   " << ds.train_combination_ids.size() << " train / " << ds.test_combination_ids.size()
            << " test\n"
            << "instances      " << ds.instances.size() << '\n'
            << "pairs          " << ds.train.size() << " train / " << ds.test.size() << " test\n"
            << "synergy rate   " << pos_train / static_cast<double>(ds.train.size()) << " train / "
            << pos_test / static_cast<double>(ds.test.size()) << " test\n"
            << "manifest hash  " << trifeature::manifest_hash(dir) << '\n';
  return 0;
}

inline int cmd_train(const CommandOptions& o) {
  auto c = resolve_config(o);
  const fs::path run = c.output_dir / c.run_id;
  prepare_dir(run, o.force);
  auto data = load_data(c);
  write_text(run / "config.ini", config::to_ini(c));
  write_text(run / "manifest_hash", data.manifest_hash + "  " + data.source + "\n");
  auto r = train::run_seeds(data.images, data.train, data.test, c.train, c.run_id, run, o.quiet);
  const auto th = thresholds_for(c.train);
  const auto text = summary_text(c.run_id + " (" + std::to_string(c.train.seeds.size()) + " seeds, test split)",
                                 r.summary, th);
  write_text(run / "summary.txt", text);
  std::cout << text;
  return 0;
}

// Probes saved checkpoints (explicit list, or every seed_*/best.ckpt of the run).
inline int cmd_probe(const CommandOptions& o) {
  auto c = resolve_config(o);
  const fs::path run = c.output_dir / c.run_id;
  std::vector<fs::path> ckpts = o.checkpoints;
  if (ckpts.empty() && fs::exists(run))
    for (const auto& e : fs::directory_iterator(run))
      if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0 && fs::exists(e.path() / "best.ckpt"))
        ckpts.push_back(e.path() / "best.ckpt");
  std::sort(ckpts.begin(), ckpts.end());
  if (ckpts.empty()) throw ConfigError("no checkpoints to probe under " + run.string() + " (pass --checkpoint)");
  const fs::path dir = run / "probe";
  prepare_dir(dir, o.force);
  auto data = load_data(c);
  std::vector<train::SeedScore> scores;
  std::ofstream res(dir / "results.csv");
  res << "model,task,seed,accuracy\n" << std::setprecision(10);
  for (const auto& path : ckpts) {
    auto m = model::load_checkpoint(path);
    if (m.config().image_size != c.data.geometry.canvas)
      throw ConfigError("checkpoint " + path.string() + " expects " + std::to_string(m.config().image_size) +
                        " px images but data.canvas is " + std::to_string(c.data.geometry.canvas));
    const auto info = model::read_checkpoint_info(path);
    std::uint64_t seed = 0;
    if (auto it = info.meta.find("seed"); it != info.meta.end()) seed = std::stoull(it->second);
    for (const auto& s : train::evaluate(m, data.images, data.train, data.test, seed, c.train.probe)) {
      scores.push_back({seed, s.task, s.accuracy});
      res << c.run_id << ',' << s.task << ',' << seed << ',' << s.accuracy << '\n';
    }
  }
  const auto agg = train::aggregate(scores);
  for (const auto& a : agg)
    res << c.run_id << ',' << a.task << ",mean," << a.mean << '\n' << c.run_id << ',' << a.task << ",std," << a.stddev << '\n';
  const auto text = summary_text(c.run_id + " probe (" + std::to_string(ckpts.size()) + " checkpoints)", agg,
                                 thresholds_for(c.train));
  write_text(dir / "summary.txt", text);
  std::cout << text;
  return 0;
}

inline int cmd_ablate(const CommandOptions& o) {
  auto c = resolve_config(o);
  const auto axis = probe::parse_axis(o.axis);
  const fs::path dir = c.output_dir / c.run_id / ("ablate_" + std::string(probe::axis_name(axis)));
  prepare_dir(dir, o.force);
  auto data = load_data(c);
  write_text(dir / "config.ini", config::to_ini(c));
  write_text(dir / "manifest_hash", data.manifest_hash + "  " + data.source + "\n");
  int index = 0;
  probe::SeedsRunner run = [&](const train::TrainConfig& cfg, const std::string& name, const fs::path&) {
    const fs::path sub = dir / ("point_" + std::to_string(index++));
    auto r = train::run_seeds(data.images, data.train, data.test, cfg, name, sub, o.quiet);
    write_text(sub / "summary.txt", summary_text(name, r.summary, thresholds_for(cfg)));
    return r;
  };
  auto points = probe::ablation_grid(axis, o.values, c.train, run);
  probe::write_ablation(points, axis, dir);

  std::ostringstream os;
  os << "ablation over " << probe::axis_name(axis) << " (" << c.train.seeds.size() << " seeds)\n\n"
     << "value        synergy mean  std\n" << std::fixed << std::setprecision(4);
  for (const auto& p : points)
    for (const auto& a : p.result.summary)
      if (a.task == "synergy") os << std::left << std::setw(13) << p.value << std::right << std::setw(12) << a.mean << std::setw(8) << a.stddev << '\n';
  write_text(dir / "summary.txt", os.str());
  std::cout << os.str();
  return 0;
}

inline int cmd_verify(const CommandOptions& o) {
  oracle::OracleOptions opt;
  opt.quick = o.quick;
  if (!o.config.empty()) opt.tau = config::load_config(o.config).train.loss.tau;
  const auto reports = oracle::verify_all(opt);
  std::cout << oracle::format_table(reports);
  if (o.out) {
    fs::create_directories(*o.out);
    write_text(*o.out / "verify.csv", oracle::to_csv(reports));
    write_text(*o.out / "verify.txt", oracle::format_table(reports));
  }
  return oracle::all_pass(reports) ? 0 : 1;
}

}  // namespace infmask::cli
