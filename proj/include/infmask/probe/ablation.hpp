#pragma once

// Ablation grids over the masking and loss-weight settings: one train + probe
// run per (value, seed), a results table and one curve file per task.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "infmask/train/train.hpp"

namespace infmask::probe {

enum class AblationAxis { Views, Ratio, Weights };

inline AblationAxis parse_axis(const std::string& s) {
  if (s == "views") return AblationAxis::Views;
  if (s == "ratio") return AblationAxis::Ratio;
  if (s == "weights") return AblationAxis::Weights;
  throw ParameterError("ablation axis must be views, ratio or weights, got '" + s + "'");
}

inline const char* axis_name(AblationAxis a) {
  switch (a) {
    case AblationAxis::Views: return "views";
    case AblationAxis::Ratio: return "ratio";
    case AblationAxis::Weights: return "weights";
  }
  return "?";
}

// Applies one axis value to a copy of `base`. Weights are "l1:l2:l3"
// (masking, unimodal, cross).
inline train::TrainConfig apply_axis_value(const train::TrainConfig& base, AblationAxis axis, const std::string& value) {
  train::TrainConfig c = base;
  try {
    switch (axis) {
      case AblationAxis::Views: {
        std::size_t used = 0;
        c.mask.views = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        break;
      }
      case AblationAxis::Ratio: {
        std::size_t used = 0;
        c.mask.ratio = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        break;
      }
      case AblationAxis::Weights: {
        std::vector<double> w;
        std::istringstream in(value);
        std::string tok;
        while (std::getline(in, tok, ':')) w.push_back(std::stod(tok));
        if (w.size() != 3) throw std::invalid_argument(value);
        c.loss.lambda_mask = w[0];
        c.loss.lambda_uni = w[1];
        c.loss.lambda_cross = w[2];
        break;
      }
    }
  } catch (const std::logic_error&) {
    throw ParameterError(std::string("bad value '") + value + "' for ablation axis " + axis_name(axis));
  }
  c.validate();
  return c;
}

struct AblationPoint {
  std::string value;
  train::SeedsResult result;
};

// Runs every value with every seed of `base`. `run` defaults to
// train::run_seeds and can be replaced (e.g. by a cached runner).
using SeedsRunner = std::function<train::SeedsResult(const train::TrainConfig&, const std::string& model_name,
                                                     const std::filesystem::path& dir)>;

inline std::vector<AblationPoint> ablation_grid(AblationAxis axis, const std::vector<std::string>& values,
                                                const train::TrainConfig& base, const SeedsRunner& run) {
  if (values.empty()) throw ParameterError("ablation needs at least one value");
  std::vector<train::TrainConfig> configs;
  for (const auto& v : values) configs.push_back(apply_axis_value(base, axis, v));  // validate all up front
  std::vector<AblationPoint> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::string name = std::string(axis_name(axis)) + "=" + values[i];
    out.push_back({values[i], run(configs[i], name, {})});
  }
  return out;
}

inline std::string results_csv(const std::vector<AblationPoint>& points, AblationAxis axis) {
  std::ostringstream os;
  os << "model,task,seed,accuracy\n" << std::setprecision(10);
  for (const auto& p : points)
    for (const auto& s : p.result.scores)
      os << axis_name(axis) << '=' << p.value << ',' << s.task << ',' << s.seed << ',' << s.accuracy << '\n';
  return os.str();
}

// axis_value,mean,std for one task.
inline std::string curve_csv(const std::vector<AblationPoint>& points, const std::string& task) {
  std::ostringstream os;
  os << "axis_value,mean,std\n" << std::setprecision(10);
  for (const auto& p : points)
    for (const auto& a : p.result.summary)
      if (a.task == task) os << p.value << ',' << a.mean << ',' << a.stddev << '\n';
  return os.str();
}

inline void write_ablation(const std::vector<AblationPoint>& points, AblationAxis axis,
                           const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "results.csv") << results_csv(points, axis);
  for (const auto& t : probe_tasks())
    std::ofstream(dir / ("curve_" + std::string(t.name) + ".csv")) << curve_csv(points, t.name);
}

}  // namespace infmask::probe
