#pragma once

// Checkpoint files: a plain-text header followed by a contiguous
// little-endian float32 payload.
//
//   infmask-checkpoint 1
//   config <key>=<value> ...
//   meta <key> <value>                  (optional, any number)
//   param <name> <rows>x<cols> float32 <byte offset>
//   ...
//   end
//   <payload>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "infmask/model/model.hpp"

namespace infmask::model {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

inline std::string config_line(const ModelConfig& c) {
  std::ostringstream os;
  os << "config num_modalities=" << c.num_modalities << " image_size=" << c.image_size << " conv_channels=";
  for (std::size_t i = 0; i < c.conv_channels.size(); ++i) os << (i ? "," : "") << c.conv_channels[i];
  os << " encoder_norm=" << (c.encoder_norm ? 1 : 0) << " token_dim=" << c.token_dim << " fusion_layers=" << c.fusion_layers << " heads=" << c.heads
     << " mlp_ratio=" << c.mlp_ratio << " head_hidden=" << c.head_hidden << " embed_dim=" << c.embed_dim
     << " init_seed=" << c.init_seed;
  return os.str();
}

inline ModelConfig parse_config_line(const std::string& line) {
  std::istringstream in(line);
  std::string word;
  in >> word;
  if (word != "config") throw ConfigError("checkpoint: expected config line, got '" + line + "'");
  ModelConfig c;
  while (in >> word) {
    auto eq = word.find('=');
    if (eq == std::string::npos) throw ConfigError("checkpoint: malformed config entry '" + word + "'");
    const std::string k = word.substr(0, eq), v = word.substr(eq + 1);
    if (k == "num_modalities") c.num_modalities = std::stoi(v);
    else if (k == "image_size") c.image_size = std::stoi(v);
    else if (k == "token_dim") c.token_dim = std::stoi(v);
    else if (k == "encoder_norm") c.encoder_norm = std::stoi(v) != 0;
    else if (k == "fusion_layers") c.fusion_layers = std::stoi(v);
    else if (k == "heads") c.heads = std::stoi(v);
    else if (k == "mlp_ratio") c.mlp_ratio = std::stoi(v);
    else if (k == "head_hidden") c.head_hidden = std::stoi(v);
    else if (k == "embed_dim") c.embed_dim = std::stoi(v);
    else if (k == "init_seed") c.init_seed = std::stoull(v);
    else if (k == "conv_channels") {
      c.conv_channels.clear();
      std::istringstream cs(v);
      std::string item;
      while (std::getline(cs, item, ',')) c.conv_channels.push_back(std::stoi(item));
    } else {
      throw ConfigError("checkpoint: unknown config key '" + k + "'");
    }
  }
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, InfMaskingModel& model,
                            const std::map<std::string, std::string>& meta = {}) {
  std::ostringstream header;
  header << "infmask-checkpoint 1\n" << config_line(model.config()) << '\n';
  for (const auto& [k, v] : meta) header << "meta " << k << ' ' << v << '\n';
  std::size_t offset = 0;
  for (const auto* p : model.parameters()) {
    header << "param " << p->name << ' ' << p->value.rows() << 'x' << p->value.cols() << " float32 " << offset << '\n';
    offset += static_cast<std::size_t>(p->value.size()) * sizeof(float);
  }
  header << "end\n";
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint " + path.string());
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto* p : model.parameters())
      out.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.size() * static_cast<Eigen::Index>(sizeof(float))));
    if (!out) throw ConfigError("short write on checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

struct CheckpointInfo {
  ModelConfig config;
  std::map<std::string, std::string> meta;
};

namespace detail {

struct ParsedCheckpoint {
  CheckpointInfo info;
  struct Entry {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    std::size_t offset = 0;
  };
  std::vector<Entry> entries;
  std::string payload;
};

inline ParsedCheckpoint parse_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  ParsedCheckpoint pc;
  std::string line;
  std::getline(in, line);
  if (line != "infmask-checkpoint 1") throw ConfigError("not a checkpoint file: " + path.string());
  std::getline(in, line);
  pc.info.config = parse_config_line(line);
  while (std::getline(in, line) && line != "end") {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string k, v;
      ls >> k;
      std::getline(ls >> std::ws, v);
      pc.info.meta[k] = v;
    } else if (kind == "param") {
      ParsedCheckpoint::Entry e;
      std::string shape, dtype;
      ls >> e.name >> shape >> dtype >> e.offset;
      if (dtype != "float32") throw ConfigError("checkpoint: unsupported dtype " + dtype);
      auto x = shape.find('x');
      if (x == std::string::npos) throw ConfigError("checkpoint: malformed shape " + shape);
      e.rows = std::stol(shape.substr(0, x));
      e.cols = std::stol(shape.substr(x + 1));
      pc.entries.push_back(e);
    } else {
      throw ConfigError("checkpoint: unexpected header line '" + line + "'");
    }
  }
  if (line != "end") throw ConfigError("checkpoint: truncated header");
  pc.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return pc;
}

}  // namespace detail

inline CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  return detail::parse_checkpoint(path).info;
}

// Loads parameters into `model`; its config must match the checkpoint's
// (init_seed aside, which only affects initialisation).
inline CheckpointInfo load_checkpoint_into(const std::filesystem::path& path, InfMaskingModel& model) {
  auto pc = detail::parse_checkpoint(path);
  ModelConfig a = pc.info.config, b = model.config();
  a.init_seed = b.init_seed = 0;
  if (!(a == b))
    throw ConfigError("checkpoint/model config mismatch: checkpoint has '" + config_line(pc.info.config) +
                      "', model has '" + config_line(model.config()) + "'");
  auto params = model.parameters();
  if (params.size() != pc.entries.size()) throw ConfigError("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = pc.entries[i];
    auto* p = params[i];
    if (e.name != p->name || e.rows != p->value.rows() || e.cols != p->value.cols())
      throw ConfigError("checkpoint: parameter '" + e.name + "' does not match model parameter '" + p->name + "'");
    const std::size_t bytes = static_cast<std::size_t>(p->value.size()) * sizeof(float);
    if (e.offset + bytes > pc.payload.size()) throw ConfigError("checkpoint: payload truncated at " + e.name);
    std::memcpy(p->value.data(), pc.payload.data() + e.offset, bytes);
  }
  return pc.info;
}

inline InfMaskingModel load_checkpoint(const std::filesystem::path& path) {
  InfMaskingModel model(read_checkpoint_info(path).config);
  load_checkpoint_into(path, model);
  return model;
}

}  // namespace infmask::model
