#pragma once

// Trifeature pair datasets: combination split, instance rendering, pair
// assembly with redundancy / uniqueness / synergy labels, and the on-disk
// layout (images/*.png, manifest.csv, mapping.json, meta).

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "infmask/core/image.hpp"
#include "infmask/core/rng.hpp"
#include "infmask/core/types.hpp"
#include "infmask/io/hash.hpp"
#include "infmask/io/png.hpp"
#include "infmask/trifeature/registry.hpp"
#include "infmask/trifeature/render.hpp"
#include "infmask/trifeature/synergy.hpp"

namespace infmask::trifeature {

inline constexpr int kNumCombinations = kNumCategories * kNumCategories * kNumCategories;

enum class Split { Train, Test };

inline const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

struct DatasetConfig {
  std::uint64_t seed = 0;
  CanvasGeometry geometry = CanvasGeometry::desk();
  int train_combinations = 800;
  int instances_per_combination = 3;
  int train_pairs = 2000;
  int test_pairs = 800;

  static DatasetConfig desk(std::uint64_t seed = 0) {
    DatasetConfig c;
    c.seed = seed;
    return c;
  }
  static DatasetConfig reference(std::uint64_t seed = 0) {
    DatasetConfig c;
    c.seed = seed;
    c.geometry = CanvasGeometry::reference();
    c.train_pairs = 10000;
    c.test_pairs = 4096;
    return c;
  }

  int test_combinations() const { return kNumCombinations - train_combinations; }

  void validate() const {
    geometry.validate();
    if (train_combinations < 1 || train_combinations >= kNumCombinations)
      throw ConfigError("train_combinations must lie in [1, " + std::to_string(kNumCombinations - 1) +
                        "], got " + std::to_string(train_combinations));
    if (instances_per_combination < 1) throw ConfigError("instances_per_combination must be >= 1");
    if (train_pairs < 2 || test_pairs < 2) throw ConfigError("each split needs at least 2 pairs");
  }
};

struct InstanceRecord {
  int id = 0;  // global index into Dataset::instances
  Split split = Split::Train;
  FactorLabel factors;
  std::uint64_t seed = 0;

  std::string file() const {
    std::ostringstream os;
    os << "images/" << split_name(split) << '_' << std::setw(6) << std::setfill('0') << id << ".png";
    return os.str();
  }
};

struct PairRecord {
  std::string pair_id;
  Split split = Split::Train;
  // Index into Dataset::instances, or into LoadedDataset::images once read back.
  int inst1 = 0;
  int inst2 = 0;
  FactorLabel f1;
  FactorLabel f2;
  int y_red = 0;
  int y_uni1 = 0;
  int y_uni2 = 0;
  int y_syn = 0;
};

struct Dataset {
  DatasetConfig config;
  SynergyMapping mapping;
  std::vector<int> train_combination_ids;
  std::vector<int> test_combination_ids;
  std::vector<InstanceRecord> instances;
  std::vector<PairRecord> train;
  std::vector<PairRecord> test;
};

namespace detail {

inline constexpr std::uint64_t kTagSplit = 0x53504c4954ULL;
inline constexpr std::uint64_t kTagInstance = 0x494e5354ULL;
inline constexpr std::uint64_t kTagPairs = 0x50414952ULL;

inline std::vector<PairRecord> assemble_pairs(const Dataset& ds, Split split, int count, Rng& rng) {
  std::vector<int> pool;
  // (shape, colour) -> instance ids, restricted to this split
  std::array<std::array<std::vector<int>, kNumCategories>, kNumCategories> by_shape_color;
  for (const auto& inst : ds.instances) {
    if (inst.split != split) continue;
    pool.push_back(inst.id);
    by_shape_color[static_cast<std::size_t>(inst.factors.shape)][static_cast<std::size_t>(inst.factors.color)]
        .push_back(inst.id);
  }
  if (pool.empty()) throw ConfigError(std::string("no instances in split ") + split_name(split));

  // exact 50/50 synergy balance (odd counts get one extra negative)
  std::vector<int> labels(static_cast<std::size_t>(count), 0);
  std::fill(labels.begin(), labels.begin() + count / 2, 1);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<PairRecord> pairs;
  pairs.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const int y = labels[static_cast<std::size_t>(k)];
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      const int a = pool[uniform_index(rng, pool.size())];
      const FactorLabel fa = ds.instances[static_cast<std::size_t>(a)].factors;
      int color2 = ds.mapping.color_for(fa.texture);
      if (y == 0) {
        // uniform over the nine off-mapping colours
        int pick = static_cast<int>(uniform_index(rng, kNumCategories - 1));
        color2 = pick >= color2 ? pick + 1 : pick;
      }
      std::vector<int> cands;
      for (int id : by_shape_color[static_cast<std::size_t>(fa.shape)][static_cast<std::size_t>(color2)])
        if (id != a) cands.push_back(id);
      if (cands.empty()) continue;
      const int b = cands[uniform_index(rng, cands.size())];
      const FactorLabel fb = ds.instances[static_cast<std::size_t>(b)].factors;

      PairRecord p;
      std::ostringstream id;
      id << split_name(split) << '-' << std::setw(6) << std::setfill('0') << k;
      p.pair_id = id.str();
      p.split = split;
      p.inst1 = a;
      p.inst2 = b;
      p.f1 = fa;
      p.f2 = fb;
      p.y_red = fa.shape;
      p.y_uni1 = fa.texture;
      p.y_uni2 = fb.texture;
      p.y_syn = synergy_label(fa.texture, fb.color, ds.mapping);
      pairs.push_back(p);
      placed = true;
    }
    if (!placed) throw ConfigError("could not assemble a pair satisfying the requested synergy label");
  }
  return pairs;
}

}  // namespace detail

// Builds the label manifest (no pixels). Deterministic in the config.
inline Dataset build_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  ds.mapping = SynergyMapping::from_seed(cfg.seed);

  std::vector<int> combos(kNumCombinations);
  std::iota(combos.begin(), combos.end(), 0);
  Rng split_rng(derive_seed(cfg.seed, {detail::kTagSplit}));
  std::shuffle(combos.begin(), combos.end(), split_rng);
  ds.train_combination_ids.assign(combos.begin(), combos.begin() + cfg.train_combinations);
  ds.test_combination_ids.assign(combos.begin() + cfg.train_combinations, combos.end());
  std::sort(ds.train_combination_ids.begin(), ds.train_combination_ids.end());
  std::sort(ds.test_combination_ids.begin(), ds.test_combination_ids.end());

  auto add_instances = [&](const std::vector<int>& ids, Split split) {
    for (int combo : ids)
      for (int r = 0; r < cfg.instances_per_combination; ++r) {
        InstanceRecord inst;
        inst.id = static_cast<int>(ds.instances.size());
        inst.split = split;
        inst.factors = FactorLabel::from_combination(combo);
        inst.seed = derive_seed(cfg.seed, {detail::kTagInstance, static_cast<std::uint64_t>(inst.id)});
        ds.instances.push_back(inst);
      }
  };
  add_instances(ds.train_combination_ids, Split::Train);
  add_instances(ds.test_combination_ids, Split::Test);

  Rng train_rng(derive_seed(cfg.seed, {detail::kTagPairs, 0}));
  Rng test_rng(derive_seed(cfg.seed, {detail::kTagPairs, 1}));
  ds.train = detail::assemble_pairs(ds, Split::Train, cfg.train_pairs, train_rng);
  ds.test = detail::assemble_pairs(ds, Split::Test, cfg.test_pairs, test_rng);
  return ds;
}

inline RenderedInstance render_record(const InstanceRecord& inst, const CanvasGeometry& geom) {
  auto r = render_instance(inst.factors, inst.seed, geom);
  quantize_u8(r.image);
  return r;
}

// ---------------------------------------------------------------------------
// On-disk format

inline std::string manifest_csv(const Dataset& ds) {
  std::ostringstream os;
  os << "pair_id,img1,img2,shape1,shape2,tex1,tex2,col1,col2,y_red,y_uni1,y_uni2,y_syn\n";
  auto emit = [&](const std::vector<PairRecord>& pairs) {
    for (const auto& p : pairs) {
      os << p.pair_id << ',' << ds.instances[static_cast<std::size_t>(p.inst1)].file() << ','
         << ds.instances[static_cast<std::size_t>(p.inst2)].file() << ',' << p.f1.shape << ','
         << p.f2.shape << ',' << p.f1.texture << ',' << p.f2.texture << ',' << p.f1.color << ','
         << p.f2.color << ',' << p.y_red << ',' << p.y_uni1 << ',' << p.y_uni2 << ',' << p.y_syn << '\n';
    }
  };
  emit(ds.train);
  emit(ds.test);
  return os.str();
}

inline std::string mapping_json(const SynergyMapping& m) {
  nlohmann::json j;
  j["seed"] = m.seed;
  j["texture_to_color"] = m.texture_to_color;
  nlohmann::json named = nlohmann::json::object();
  for (int t = 0; t < kNumCategories; ++t)
    named[std::string(kTextureNames[static_cast<std::size_t>(t)])] =
        std::string(kColorNames[static_cast<std::size_t>(m.color_for(t))]);
  j["named"] = named;
  return j.dump(2) + "\n";
}

inline std::string meta_text(const Dataset& ds) {
  const auto& c = ds.config;
  std::ostringstream os;
  os << "registry_version = " << kRegistryVersion << '\n'
     << "seed = " << c.seed << '\n'
     << "canvas = " << c.geometry.canvas << '\n'
     << "bbox = " << c.geometry.bbox << '\n'
     << "train_combinations = " << c.train_combinations << '\n'
     << "test_combinations = " << c.test_combinations() << '\n'
     << "instances_per_combination = " << c.instances_per_combination << '\n'
     << "train_pairs = " << c.train_pairs << '\n'
     << "test_pairs = " << c.test_pairs << '\n'
     << "num_instances = " << ds.instances.size() << '\n';
  return os.str();
}

// Writes images and text files into `dir`. Refuses a non-empty directory
// unless `force` is set.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir, bool force = false) {
  namespace fs = std::filesystem;
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
  fs::create_directories(dir / "images");
  for (const auto& inst : ds.instances) {
    auto r = render_record(inst, ds.config.geometry);
    io::write_png((dir / inst.file()).string(), r.image);
  }
  std::ofstream(dir / "manifest.csv", std::ios::binary) << manifest_csv(ds);
  std::ofstream(dir / "mapping.json", std::ios::binary) << mapping_json(ds.mapping);
  std::ofstream(dir / "meta", std::ios::binary) << meta_text(ds);
}

inline std::string manifest_hash(const std::filesystem::path& dir) {
  return io::file_hash((dir / "manifest.csv").string());
}

// A dataset loaded back from disk: pair records plus decoded images, one
// per distinct file referenced by the manifest.
struct LoadedDataset {
  std::filesystem::path root;
  SynergyMapping mapping;
  std::map<std::string, std::string> meta;
  std::vector<Image> images;
  std::vector<PairRecord> train;
  std::vector<PairRecord> test;
  std::string manifest_hash;

  int canvas() const { return images.empty() ? 0 : images.front().height; }
};

inline std::map<std::string, std::string> parse_meta(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

inline LoadedDataset load_dataset(const std::filesystem::path& dir) {
  LoadedDataset out;
  out.root = dir;
  const std::string manifest = io::read_file((dir / "manifest.csv").string());
  out.manifest_hash = io::git_blob_hash(manifest);
  out.meta = parse_meta(io::read_file((dir / "meta").string()));

  auto j = nlohmann::json::parse(io::read_file((dir / "mapping.json").string()));
  out.mapping.seed = j.at("seed").get<std::uint64_t>();
  out.mapping.texture_to_color = j.at("texture_to_color").get<std::array<int, kNumCategories>>();
  if (!out.mapping.valid()) throw ConfigError("mapping.json does not describe a bijection");

  std::map<std::string, int> image_index;
  auto intern = [&](const std::string& rel) {
    auto it = image_index.find(rel);
    if (it != image_index.end()) return it->second;
    int idx = static_cast<int>(out.images.size());
    out.images.push_back(io::read_png((dir / rel).string()));
    image_index.emplace(rel, idx);
    return idx;
  };

  std::istringstream in(manifest);
  std::string line;
  std::getline(in, line);  // header
  if (line.rfind("pair_id,img1,img2", 0) != 0) throw ConfigError("unexpected manifest header: " + line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 13) throw ConfigError("malformed manifest row: " + line);
    PairRecord p;
    p.pair_id = f[0];
    p.split = p.pair_id.rfind("train", 0) == 0 ? Split::Train : Split::Test;
    p.inst1 = intern(f[1]);
    p.inst2 = intern(f[2]);
    p.f1 = {std::stoi(f[3]), std::stoi(f[5]), std::stoi(f[7])};
    p.f2 = {std::stoi(f[4]), std::stoi(f[6]), std::stoi(f[8])};
    p.y_red = std::stoi(f[9]);
    p.y_uni1 = std::stoi(f[10]);
    p.y_uni2 = std::stoi(f[11]);
    p.y_syn = std::stoi(f[12]);
    (p.split == Split::Train ? out.train : out.test).push_back(p);
  }
  return out;
}

}  // namespace infmask::trifeature
