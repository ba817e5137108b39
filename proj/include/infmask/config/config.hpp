#pragma once

// Experiment config files: INI-style sections with flat `key = value` lines.
// Every key is whitelisted; anything else is rejected with its full name.

#include <algorithm>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "infmask/augment/pipeline.hpp"
#include "infmask/io/hash.hpp"
#include "infmask/train/train.hpp"
#include "infmask/trifeature/dataset.hpp"

namespace infmask::config {

struct ExperimentConfig {
  std::string run_id = "infmasking";
  std::filesystem::path output_dir = "runs";
  std::filesystem::path data_dir;  // empty: generate in memory
  trifeature::DatasetConfig data = trifeature::DatasetConfig::desk(0);
  train::TrainConfig train;

  void validate() const {
    data.validate();
    train.validate();
    if (train.model.image_size != data.geometry.canvas)
      throw ConfigError("model.image_size (" + std::to_string(train.model.image_size) +
                        ") must equal data.canvas (" + std::to_string(data.geometry.canvas) + ")");
    if (!data_dir.empty() && std::filesystem::exists(data_dir) && !std::filesystem::is_directory(data_dir))
      throw ConfigError("data.dir " + data_dir.string() + " is not a directory");
  }
};

// "42..46" or "42,43,44".
inline std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  auto dots = text.find("..");
  try {
    if (dots != std::string::npos) {
      const auto lo = std::stoull(text.substr(0, dots)), hi = std::stoull(text.substr(dots + 2));
      if (hi < lo) throw ConfigError("empty seed range '" + text + "'");
      for (auto s = lo; s <= hi; ++s) out.push_back(s);
    } else {
      std::istringstream in(text);
      std::string tok;
      while (std::getline(in, tok, ',')) {
        std::size_t used = 0;
        out.push_back(std::stoull(tok, &used));
        if (tok.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(tok);
      }
    }
  } catch (const std::logic_error&) {
    throw ConfigError("bad seed list '" + text + "'");
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

inline std::string format_seeds(const std::vector<std::uint64_t>& seeds) {
  std::ostringstream os;
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
  return os.str();
}

inline std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(std::stoi(tok));
  if (out.empty()) throw std::invalid_argument(text);
  return out;
}

namespace detail {

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

template <class T>
T parse_number(const std::string& v) {
  std::istringstream in(v);
  T x{};
  in >> x;
  if (in.fail() || !(in >> std::ws).eof()) throw std::invalid_argument(v);
  return x;
}

inline bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument(v);
}

inline const std::map<std::string, Setter>& setters() {
  using C = ExperimentConfig;
  static const std::map<std::string, Setter> table = {
      {"run_id", [](C& c, const std::string& v) { c.run_id = v; }},
      {"out", [](C& c, const std::string& v) { c.output_dir = v; }},

      {"data.scale",
       [](C& c, const std::string& v) {
         const auto seed = c.data.seed;
         if (v == "desk") c.data = trifeature::DatasetConfig::desk(seed);
         else if (v == "reference") c.data = trifeature::DatasetConfig::reference(seed);
         else throw std::invalid_argument(v);
         c.train.model.image_size = c.data.geometry.canvas;
       }},
      {"data.seed", [](C& c, const std::string& v) { c.data.seed = parse_number<std::uint64_t>(v); }},
      {"data.dir", [](C& c, const std::string& v) { c.data_dir = v; }},
      {"data.canvas",
       [](C& c, const std::string& v) {
         c.data.geometry.canvas = parse_number<int>(v);
         c.train.model.image_size = c.data.geometry.canvas;
       }},
      {"data.bbox", [](C& c, const std::string& v) { c.data.geometry.bbox = parse_number<int>(v); }},
      {"data.train_combinations", [](C& c, const std::string& v) { c.data.train_combinations = parse_number<int>(v); }},
      {"data.instances_per_combination",
       [](C& c, const std::string& v) { c.data.instances_per_combination = parse_number<int>(v); }},
      {"data.train_pairs", [](C& c, const std::string& v) { c.data.train_pairs = parse_number<int>(v); }},
      {"data.test_pairs", [](C& c, const std::string& v) { c.data.test_pairs = parse_number<int>(v); }},

      {"augment.ops",
       [](C& c, const std::string& v) {
         for (auto& ops : c.train.augmentation.per_modality) ops = augment::parse_ops(v);
       }},
      {"augment.modality1", [](C& c, const std::string& v) { c.train.augmentation.per_modality.at(0) = augment::parse_ops(v); }},
      {"augment.modality2", [](C& c, const std::string& v) { c.train.augmentation.per_modality.at(1) = augment::parse_ops(v); }},
      {"augment.unimodal_source",
       [](C& c, const std::string& v) {
         if (v == "raw") c.train.unimodal_source = train::UnimodalSource::Raw;
         else if (v == "augmented") c.train.unimodal_source = train::UnimodalSource::Augmented;
         else throw std::invalid_argument(v);
       }},

      {"model.image_size", [](C& c, const std::string& v) { c.train.model.image_size = parse_number<int>(v); }},
      {"model.conv_channels", [](C& c, const std::string& v) { c.train.model.conv_channels = parse_int_list(v); }},
      {"model.encoder_norm", [](C& c, const std::string& v) { c.train.model.encoder_norm = parse_bool(v); }},
      {"model.token_dim", [](C& c, const std::string& v) { c.train.model.token_dim = parse_number<int>(v); }},
      {"model.fusion_layers", [](C& c, const std::string& v) { c.train.model.fusion_layers = parse_number<int>(v); }},
      {"model.heads", [](C& c, const std::string& v) { c.train.model.heads = parse_number<int>(v); }},
      {"model.mlp_ratio", [](C& c, const std::string& v) { c.train.model.mlp_ratio = parse_number<int>(v); }},
      {"model.head_hidden", [](C& c, const std::string& v) { c.train.model.head_hidden = parse_number<int>(v); }},
      {"model.embed_dim", [](C& c, const std::string& v) { c.train.model.embed_dim = parse_number<int>(v); }},

      {"loss.tau", [](C& c, const std::string& v) { c.train.loss.tau = parse_number<double>(v); }},
      {"loss.lambda_mask", [](C& c, const std::string& v) { c.train.loss.lambda_mask = parse_number<double>(v); }},
      {"loss.lambda_uni", [](C& c, const std::string& v) { c.train.loss.lambda_uni = parse_number<double>(v); }},
      {"loss.lambda_cross", [](C& c, const std::string& v) { c.train.loss.lambda_cross = parse_number<double>(v); }},
      {"loss.estimator", [](C& c, const std::string& v) { c.train.loss.estimator = losses::parse_estimator(v); }},
      {"loss.symmetric", [](C& c, const std::string& v) { c.train.loss.symmetric = parse_bool(v); }},
      {"loss.mask_ratio", [](C& c, const std::string& v) { c.train.mask.ratio = parse_number<double>(v); }},
      {"loss.mask_views", [](C& c, const std::string& v) { c.train.mask.views = parse_number<int>(v); }},
      {"loss.mask_mode", [](C& c, const std::string& v) { c.train.mask.mode = model::parse_mask_mode(v); }},

      {"train.lr", [](C& c, const std::string& v) { c.train.lr = parse_number<double>(v); }},
      {"train.schedule", [](C& c, const std::string& v) { c.train.schedule = train::parse_schedule(v); }},
      {"train.weight_decay", [](C& c, const std::string& v) { c.train.weight_decay = parse_number<double>(v); }},
      {"train.beta1", [](C& c, const std::string& v) { c.train.beta1 = parse_number<double>(v); }},
      {"train.beta2", [](C& c, const std::string& v) { c.train.beta2 = parse_number<double>(v); }},
      {"train.epochs", [](C& c, const std::string& v) { c.train.epochs = parse_number<int>(v); }},
      {"train.batch_size", [](C& c, const std::string& v) { c.train.batch_size = parse_number<int>(v); }},
      {"train.patience", [](C& c, const std::string& v) { c.train.patience = parse_number<int>(v); }},
      {"train.val_every", [](C& c, const std::string& v) { c.train.val_every = parse_number<int>(v); }},
      {"train.val_fraction", [](C& c, const std::string& v) { c.train.val_fraction = parse_number<double>(v); }},
      {"train.checkpoint_every", [](C& c, const std::string& v) { c.train.checkpoint_every = parse_number<int>(v); }},
      {"train.seeds", [](C& c, const std::string& v) { c.train.seeds = parse_seeds(v); }},

      {"probe.features", [](C& c, const std::string& v) { c.train.probe.features = probe::parse_feature_source(v); }},
      {"probe.l2", [](C& c, const std::string& v) { c.train.probe.l2 = parse_number<double>(v); }},
      {"probe.tolerance", [](C& c, const std::string& v) { c.train.probe.tolerance = parse_number<double>(v); }},
      {"probe.max_iterations", [](C& c, const std::string& v) { c.train.probe.max_iterations = parse_number<int>(v); }},
  };
  return table;
}

}  // namespace detail

inline std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : detail::setters()) out.push_back(k);
  return out;
}

// Applies one `section.key = value` override. Throws ConfigError naming the key.
inline void set_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
  const auto& table = detail::setters();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->second(c, value);
  } catch (const ConfigError& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': invalid value '" + value + "'");
  }
}

// Keys are applied in a fixed order so that data.scale resets before any
// explicit data.* override, whatever the order in the file.
inline ExperimentConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax error: ") + e.what());
  }
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      entries.emplace_back(name, node.data());
      continue;
    }
    for (const auto& [key, leaf] : node) {
      if (!leaf.empty()) throw ConfigError("unknown config key '" + name + "." + key + "'");
      entries.emplace_back(name + "." + key, leaf.data());
    }
  }
  ExperimentConfig c;
  c.train.model.image_size = c.data.geometry.canvas;
  auto priority = [](const std::string& k) { return k == "data.scale" ? 0 : k == "data.seed" ? -1 : 1; };
  std::stable_sort(entries.begin(), entries.end(),
                   [&](const auto& a, const auto& b) { return priority(a.first) < priority(b.first); });
  for (const auto& [k, v] : entries) set_key(c, k, v);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(io::read_file(path.string()));
}

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

inline std::string join_ops(const std::vector<augment::AugOp>& ops) {
  if (ops.empty()) return "none";
  std::string s;
  for (const auto& op : ops) s += (s.empty() ? "" : " ") + op.to_string();
  return s;
}

}  // namespace detail

// Fully resolved config; parse_config(to_ini(c)) reproduces c.
inline std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  const auto& t = c.train;
  os << "run_id = " << c.run_id << "\nout = " << c.output_dir.string() << "\n\n";
  os << "[data]\nseed = " << c.data.seed << '\n';
  if (!c.data_dir.empty()) os << "dir = " << c.data_dir.string() << '\n';
  os << "canvas = " << c.data.geometry.canvas << "\nbbox = " << c.data.geometry.bbox
     << "\ntrain_combinations = " << c.data.train_combinations
     << "\ninstances_per_combination = " << c.data.instances_per_combination
     << "\ntrain_pairs = " << c.data.train_pairs << "\ntest_pairs = " << c.data.test_pairs << "\n\n";
  os << "[augment]\nmodality1 = " << detail::join_ops(t.augmentation.per_modality.at(0))
     << "\nmodality2 = " << detail::join_ops(t.augmentation.per_modality.at(1))
     << "\nunimodal_source = " << (t.unimodal_source == train::UnimodalSource::Raw ? "raw" : "augmented") << "\n\n";
  os << "[model]\nimage_size = " << t.model.image_size << "\nconv_channels = " << detail::join_ints(t.model.conv_channels)
     << "\nencoder_norm = " << (t.model.encoder_norm ? 1 : 0) << "\ntoken_dim = " << t.model.token_dim
     << "\nfusion_layers = " << t.model.fusion_layers << "\nheads = " << t.model.heads
     << "\nmlp_ratio = " << t.model.mlp_ratio << "\nhead_hidden = " << t.model.head_hidden
     << "\nembed_dim = " << t.model.embed_dim << "\n\n";
  os << "[loss]\ntau = " << t.loss.tau << "\nlambda_mask = " << t.loss.lambda_mask
     << "\nlambda_uni = " << t.loss.lambda_uni << "\nlambda_cross = " << t.loss.lambda_cross
     << "\nestimator = " << losses::estimator_name(t.loss.estimator) << "\nsymmetric = " << (t.loss.symmetric ? 1 : 0)
     << "\nmask_ratio = " << t.mask.ratio << "\nmask_views = " << t.mask.views
     << "\nmask_mode = " << model::mask_mode_name(t.mask.mode) << "\n\n";
  os << "[train]\nlr = " << t.lr << "\nschedule = " << train::schedule_name(t.schedule)
     << "\nweight_decay = " << t.weight_decay << "\nbeta1 = " << t.beta1 << "\nbeta2 = " << t.beta2
     << "\nepochs = " << t.epochs << "\nbatch_size = " << t.batch_size << "\npatience = " << t.patience
     << "\nval_every = " << t.val_every << "\nval_fraction = " << t.val_fraction
     << "\ncheckpoint_every = " << t.checkpoint_every << "\nseeds = " << format_seeds(t.seeds) << "\n\n";
  os << "[probe]\nfeatures = " << probe::feature_source_name(t.probe.features) << "\nl2 = " << t.probe.l2
     << "\ntolerance = " << t.probe.tolerance << "\nmax_iterations = " << t.probe.max_iterations << '\n';
  return os.str();
}

// Content hash of everything that affects a training run's results (seed
// list, run id and output location excluded).
inline std::string training_hash(const ExperimentConfig& c, std::uint64_t seed) {
  ExperimentConfig k = c;
  k.run_id.clear();
  k.output_dir.clear();
  k.data_dir.clear();
  k.train.seeds = {seed};
  return io::git_blob_hash(to_ini(k));
}

}  // namespace infmask::config
