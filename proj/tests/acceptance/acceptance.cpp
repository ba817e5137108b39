// Acceptance run: one PASS/FAIL line per criterion (1-12).
//
// Criteria 5-11 come from the oracle suite; 1-4 and 12 train the desk-scale
// configurations (7 settings x 5 seeds). Finished runs are cached under
// --cache, keyed by a hash of the resolved training config, so a second
// invocation only re-reads scores.

#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "infmask/cli/commands.hpp"
#include "infmask/config/config.hpp"
#include "infmask/oracle/oracle.hpp"
#include "infmask/train/train.hpp"

using namespace infmask;
namespace fs = std::filesystem;

namespace {

// Tolerances, pinned.
constexpr double kRedundancyMin = 0.95;
constexpr double kUniquenessMin = 0.70;
constexpr double kSynergyMin = 0.60;
constexpr double kCrossSynergyMax = 0.55;
constexpr double kWeightMargin = 0.02;
constexpr double kViewsGain = 0.03;
constexpr double kViewsBand = 0.04;
constexpr double kRatioGain = 0.03;
constexpr double kNullBand = 0.03;
constexpr int kNullPermutations = 5;

// Bump when a code change alters training results, so stale cache entries
// are not reused.
constexpr const char* kCacheVersion = "v1";

struct Line {
  int id;
  bool pass;
  std::string detail;
};

std::string pct(double x) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << 100.0 * x;
  return os.str();
}

Line from_oracle(int id, const std::string& what, const oracle::ReportList& reports,
                 const std::vector<std::string>& checks) {
  int n = 0, ok = 0;
  std::string first_fail;
  for (const auto& r : reports)
    if (std::find(checks.begin(), checks.end(), r.check) != checks.end()) {
      ++n;
      ok += r.pass;
      if (!r.pass && first_fail.empty()) {
        std::ostringstream os;
        os << "; first failure " << r.check << " [" << r.instance << "] ref " << r.reference << " cand " << r.candidate;
        first_fail = os.str();
      }
    }
  std::ostringstream os;
  os << what << ": " << ok << "/" << n << " pass" << first_fail;
  return {id, n > 0 && ok == n, os.str()};
}

// ---------------------------------------------------------------------------

struct Setting {
  std::string name;
  train::TrainConfig cfg;
};

struct SettingResult {
  std::vector<train::SeedScore> scores;
  std::vector<train::Aggregate> summary;
  double mean(const std::string& task) const {
    for (const auto& a : summary)
      if (a.task == task) return a.mean;
    return std::nan("");
  }
  double stddev(const std::string& task) const {
    for (const auto& a : summary)
      if (a.task == task) return a.stddev;
    return std::nan("");
  }
};

class Runner {
 public:
  Runner(const config::ExperimentConfig& base, fs::path cache) : base_(base), cache_(std::move(cache)) {
    data_ = cli::load_data(base_);
  }

  fs::path entry(const train::TrainConfig& cfg, std::uint64_t seed) const {
    config::ExperimentConfig e = base_;
    e.train = cfg;
    return cache_ / (config::training_hash(e, seed).substr(0, 16) + "-" + kCacheVersion + "-s" + std::to_string(seed));
  }

  SettingResult run(const Setting& s) {
    SettingResult out;
    for (auto seed : s.cfg.seeds) {
      const fs::path dir = entry(s.cfg, seed);
      if (!fs::exists(dir / "scores.csv")) train_one(s, seed, dir);
      std::ifstream in(dir / "scores.csv");
      std::string task;
      double acc = 0;
      while (in >> task >> acc) out.scores.push_back({seed, task, acc});
    }
    out.summary = train::aggregate(out.scores);
    return out;
  }

  const cli::DataBundle& data() const { return data_; }

 private:
  void train_one(const Setting& s, std::uint64_t seed, const fs::path& dir) {
    const auto t0 = std::chrono::steady_clock::now();
    std::cerr << "[acceptance] training " << s.name << " seed " << seed << " -> " << dir.string() << '\n';
    train::RunOutput ro;
    ro.dir = dir;
    ro.run_id = s.name;
    ro.quiet = false;
    auto tr = train::train(data_.images, data_.train, s.cfg, seed, ro);
    const auto scores = train::evaluate(tr.best, data_.images, data_.train, data_.test, seed, s.cfg.probe);
    config::ExperimentConfig e = base_;
    e.train = s.cfg;
    e.train.seeds = {seed};
    std::ofstream(dir / "config.ini") << config::to_ini(e);
    // scores.csv last: its presence marks a complete entry
    std::ofstream tmp(dir / "scores.tmp");
    tmp << std::setprecision(10);
    for (const auto& sc : scores) tmp << sc.task << ' ' << sc.accuracy << '\n';
    tmp.close();
    fs::rename(dir / "scores.tmp", dir / "scores.csv");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "[acceptance] done " << s.name << " seed " << seed << " in " << std::fixed << std::setprecision(0)
              << secs << " s (best epoch " << tr.best_epoch << ")\n";
  }

  config::ExperimentConfig base_;
  fs::path cache_;
  cli::DataBundle data_;
};

// Permuted-label probes on trained features: mean accuracy over several
// permutations per task.
Line null_calibration(const Runner& runner, const Setting& s) {
  const fs::path ckpt = runner.entry(s.cfg, s.cfg.seeds.front()) / "best.ckpt";
  if (!fs::exists(ckpt)) return {12, false, "missing checkpoint " + ckpt.string()};
  auto m = model::load_checkpoint(ckpt);
  const auto& d = runner.data();
  auto ftr = probe::extract_features(m, d.images, d.train, s.cfg.probe.features);
  auto fte = probe::extract_features(m, d.images, d.test, s.cfg.probe.features);
  bool ok = true;
  std::ostringstream os;
  os << "permuted-label probe, mean of " << kNullPermutations << " permutations:";
  for (const auto& t : probe::probe_tasks()) {
    const auto ytr = ftr.labels(t), yte = fte.labels(t);
    double acc = 0.0;
    for (int k = 0; k < kNullPermutations; ++k) {
      auto perm = ytr;
      Rng rng(derive_seed(0x4e554c4cULL, {static_cast<std::uint64_t>(k)}));
      std::shuffle(perm.begin(), perm.end(), rng);
      acc += probe::linear_probe(ftr.z, perm, fte.z, yte, t.classes, static_cast<std::uint64_t>(k), s.cfg.probe) /
             kNullPermutations;
    }
    const bool pass = std::abs(acc - t.chance()) <= kNullBand;
    ok = ok && pass;
    os << ' ' << t.name << ' ' << pct(acc) << "% (chance " << pct(t.chance()) << ")" << (pass ? "" : " OUT");
  }
  return {12, ok, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"acceptance criteria 1-12"};
  fs::path cache = "acceptance_cache";
  fs::path cfg_path = fs::path(INFMASK_SOURCE_DIR) / "configs" / "trifeature.cfg";
  bool oracle_only = false;
  app.add_option("--cache", cache, "directory for cached training runs");
  app.add_option("--config", cfg_path, "desk-scale base config")->check(CLI::ExistingFile);
  app.add_flag("--oracle-only", oracle_only, "criteria 5-11 only (training criteria are reported as not run)");
  CLI11_PARSE(app, argc, argv);

  std::vector<Line> lines;
  const auto t0 = std::chrono::steady_clock::now();

  // 5-11: oracle suite at full sample counts
  oracle::OracleOptions oo;
  const auto reports = oracle::verify_all(oo);
  lines.push_back(from_oracle(5, "Gaussian bound <= MC + 3 stderr, 50 instances, 1e5 samples", reports, {"jensen_bound"}));
  lines.push_back(from_oracle(6, "MGF closed form vs 1e6 draws within 1%", reports, {"mgf_sampling"}));
  lines.push_back(from_oracle(7, "analytic vs float64 central differences, 4 losses x 20 instances, rel err < 1e-4", reports,
                              {"gradient_info_nce", "gradient_comm", "gradient_infmasking_mc", "gradient_gaussian_bound"}));
  lines.push_back(from_oracle(8, "Sigma=0 bound equals MC on the mean view within 1e-9", reports, {"degenerate_gaussian"}));
  lines.push_back(from_oracle(9, "10000 masks per r in {0.25,0.5,0.7}: exact ceil(rT) count; frequency within 0.02 of r (T=20)",
                              reports, {"mask_exact_count", "mask_frequency"}));
  lines.push_back(from_oracle(10, "(0,1,1) total loss equals the CoMM objective within 1e-9", reports, {"reduction_identity"}));
  lines.push_back(from_oracle(11, "reference-scale counts, synergy balance, manifest hash determinism", reports,
                              {"dataset_counts", "synergy_balance", "dataset_determinism"}));
  std::cerr << "[acceptance] oracle suite: " << std::count_if(reports.begin(), reports.end(), [](const auto& r) { return r.pass; })
            << "/" << reports.size() << " checks pass\n";

  if (oracle_only) {
    for (int id : {1, 2, 3, 4, 12}) lines.push_back({id, false, "not run (--oracle-only)"});
  } else {
    auto base = config::load_config(cfg_path);
    base.validate();
    fs::create_directories(cache);
    Runner runner(base, cache);

    auto with = [&](const std::string& name, auto&& edit) {
      Setting s{name, base.train};
      edit(s.cfg);
      s.cfg.validate();
      return s;
    };
    const Setting full = with("infmasking", [](train::TrainConfig&) {});
    const Setting cross = with("cross", [](train::TrainConfig& c) {
      c.loss.lambda_mask = 0;
      c.loss.lambda_uni = 0;
      c.loss.lambda_cross = 1;
    });
    const Setting comm = with("comm", [](train::TrainConfig& c) {
      c.loss.lambda_mask = 0;
      c.loss.lambda_uni = 1;
      c.loss.lambda_cross = 1;
    });
    std::map<int, Setting> views;
    for (int v : {1, 8, 10}) views.emplace(v, with("views" + std::to_string(v), [v](train::TrainConfig& c) { c.mask.views = v; }));
    const Setting ratio03 = with("ratio0.3", [](train::TrainConfig& c) { c.mask.ratio = 0.3; });

    const auto r_full = runner.run(full);
    const auto r_cross = runner.run(cross);
    const auto r_comm = runner.run(comm);
    std::map<int, SettingResult> r_views;
    r_views[6] = r_full;
    for (const auto& [v, s] : views) r_views[v] = runner.run(s);
    const auto r_ratio = runner.run(ratio03);

    {
      const double R = r_full.mean("redundancy"), U = r_full.mean("uniqueness_1"), S = r_full.mean("synergy");
      const double Sx = r_cross.mean("synergy");
      const bool pass = R >= kRedundancyMin && U >= kUniquenessMin && S >= kSynergyMin && Sx <= kCrossSynergyMax;
      std::ostringstream os;
      os << "InfMasking R " << pct(R) << " (>= 95), U " << pct(U) << " (>= 70), S " << pct(S)
         << " (>= 60); cross-only S " << pct(Sx) << " (<= 55); U2 " << pct(r_full.mean("uniqueness_2"));
      lines.push_back({1, pass, os.str()});
    }
    {
      const double a = r_full.mean("synergy"), b = r_comm.mean("synergy"), c = r_cross.mean("synergy");
      const bool pass = a - b >= kWeightMargin && b - c >= kWeightMargin;
      std::ostringstream os;
      os << "synergy (1,1,1) " << pct(a) << " > (0,1,1) " << pct(b) << " > (0,0,1) " << pct(c) << ", margins >= 2 points";
      lines.push_back({2, pass, os.str()});
    }
    {
      const double s1 = r_views[1].mean("synergy"), s6 = r_views[6].mean("synergy");
      double lo = 1.0, hi = 0.0;
      for (int v : {6, 8, 10}) {
        lo = std::min(lo, r_views[v].mean("synergy"));
        hi = std::max(hi, r_views[v].mean("synergy"));
      }
      const bool pass = s6 - s1 >= kViewsGain && hi - lo <= kViewsBand;
      std::ostringstream os;
      os << "synergy M'=1 " << pct(s1) << ", M'=6 " << pct(s6) << ", M'=8 " << pct(r_views[8].mean("synergy"))
         << ", M'=10 " << pct(r_views[10].mean("synergy")) << "; gain >= 3, band " << pct(hi - lo) << " <= 4";
      lines.push_back({3, pass, os.str()});
    }
    {
      const double s7 = r_full.mean("synergy"), s3 = r_ratio.mean("synergy");
      std::ostringstream os;
      os << "synergy r=0.7 " << pct(s7) << " vs r=0.3 " << pct(s3) << ", gain >= 3 points";
      lines.push_back({4, s7 - s3 >= kRatioGain, os.str()});
    }
    lines.push_back(null_calibration(runner, full));

    // full per-setting table for the log
    std::cerr << "\n[acceptance] setting           redundancy   uniq_1       uniq_2       synergy\n";
    auto row = [&](const std::string& n, const SettingResult& r) {
      std::cerr << "[acceptance] " << std::left << std::setw(18) << n << std::right;
      for (const char* t : {"redundancy", "uniqueness_1", "uniqueness_2", "synergy"})
        std::cerr << std::setw(6) << pct(r.mean(t)) << " +-" << std::setw(4) << pct(r.stddev(t));
      std::cerr << '\n';
    };
    row("(1,1,1) M'=6 r=.7", r_full);
    row("(0,1,1)", r_comm);
    row("(0,0,1)", r_cross);
    for (int v : {1, 8, 10}) row("M'=" + std::to_string(v), r_views[v]);
    row("r=0.3", r_ratio);
  }

  std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) { return a.id < b.id; });
  int failed = 0;
  for (const auto& l : lines) {
    std::cout << "criterion " << std::setw(2) << l.id << ": " << (l.pass ? "PASS" : "FAIL") << "  " << l.detail << '\n';
    failed += !l.pass;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << (lines.size() - failed) << "/" << lines.size() << " criteria pass (" << std::fixed << std::setprecision(0)
            << secs << " s)\n";
  return failed == 0 ? 0 : 1;
}
