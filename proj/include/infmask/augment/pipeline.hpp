#pragma once

#include <cctype>

// Label-preserving image augmentations applied independently per modality,
// plus the modality projections used to build unimodal inputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "infmask/core/image.hpp"
#include "infmask/core/rng.hpp"
#include "infmask/core/types.hpp"
#include "infmask/trifeature/render.hpp"

namespace infmask::augment {

// A multimodal sample: one optional image per modality. An empty slot is the
// "modality removed" marker produced by projections. Factor labels travel
// as metadata and are never touched by augmentation.
struct MultimodalSample {
  std::vector<std::optional<Image>> modalities;
  std::vector<trifeature::FactorLabel> labels;

  std::size_t num_modalities() const { return modalities.size(); }
  bool has(std::size_t i) const { return i < modalities.size() && modalities[i].has_value(); }
  bool operator==(const MultimodalSample&) const = default;
};

enum class OpKind { Crop, Flip, Jitter, Gray, Blur };

struct AugOp {
  OpKind kind = OpKind::Flip;
  // Crop: scale range, aspect-ratio range, minimum visible foreground fraction.
  double scale_min = 0.2, scale_max = 1.0;
  double ratio_min = 3.0 / 4.0, ratio_max = 4.0 / 3.0;
  double min_visible = 0.3;
  // Flip / Jitter / Gray / Blur: application probability.
  double p = 0.5;
  // Jitter strengths.
  double brightness = 0.3, contrast = 0.3, saturation = 0.3, hue = 0.03;
  // Blur sigma range in pixels.
  double sigma_min = 0.1, sigma_max = 0.8;

  std::string name() const {
    switch (kind) {
      case OpKind::Crop: return "crop";
      case OpKind::Flip: return "flip";
      case OpKind::Jitter: return "jitter";
      case OpKind::Gray: return "gray";
      case OpKind::Blur: return "blur";
    }
    return "?";
  }

  void validate() const {
    auto prob = [](double v) { return v >= 0.0 && v <= 1.0; };
    switch (kind) {
      case OpKind::Crop:
        if (!(scale_min > 0.0) || !(scale_max > 0.0) || scale_min > scale_max || scale_max > 1.0)
          throw ParameterError("crop scale range must satisfy 0 < min <= max <= 1 (degenerate crop window)");
        if (!(ratio_min > 0.0) || ratio_min > ratio_max)
          throw ParameterError("crop aspect ratio range must satisfy 0 < min <= max");
        if (!prob(min_visible)) throw ParameterError("crop min_visible must lie in [0, 1]");
        break;
      case OpKind::Jitter:
        if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0 || hue > 0.5)
          throw ParameterError("jitter strengths must be non-negative and hue <= 0.5");
        [[fallthrough]];
      default:
        if (!prob(p)) throw ParameterError(name() + " probability must lie in [0, 1]");
        if (kind == OpKind::Blur && (!(sigma_min > 0.0) || sigma_min > sigma_max))
          throw ParameterError("blur sigma range must satisfy 0 < min <= max");
    }
  }

  // Textual form accepted by parse_ops().
  std::string to_string() const {
    std::ostringstream os;
    os << name() << '(';
    switch (kind) {
      case OpKind::Crop: os << scale_min << ',' << scale_max << ',' << min_visible; break;
      case OpKind::Flip:
      case OpKind::Gray: os << p; break;
      case OpKind::Jitter:
        os << p << ',' << brightness << ',' << contrast << ',' << saturation << ',' << hue;
        break;
      case OpKind::Blur: os << p << ',' << sigma_min << ',' << sigma_max; break;
    }
    os << ')';
    return os.str();
  }
};

inline AugOp make_crop(double smin = 0.2, double smax = 1.0, double min_visible = 0.3) {
  AugOp op;
  op.kind = OpKind::Crop;
  op.scale_min = smin;
  op.scale_max = smax;
  op.min_visible = min_visible;
  return op;
}
inline AugOp make_flip(double p = 0.5) {
  AugOp op;
  op.kind = OpKind::Flip;
  op.p = p;
  return op;
}
inline AugOp make_jitter(double p = 0.8, double b = 0.3, double c = 0.3, double s = 0.3, double h = 0.03) {
  AugOp op;
  op.kind = OpKind::Jitter;
  op.p = p;
  op.brightness = b;
  op.contrast = c;
  op.saturation = s;
  op.hue = h;
  return op;
}
inline AugOp make_gray(double p = 0.2) {
  AugOp op;
  op.kind = OpKind::Gray;
  op.p = p;
  return op;
}
inline AugOp make_blur(double p = 0.5, double smin = 0.1, double smax = 0.8) {
  AugOp op;
  op.kind = OpKind::Blur;
  op.p = p;
  op.sigma_min = smin;
  op.sigma_max = smax;
  return op;
}

inline std::vector<AugOp> default_ops() {
  return {make_crop(), make_flip(), make_jitter(), make_gray(), make_blur()};
}

// Parses "crop(0.2,1.0,0.3) flip(0.5) jitter(0.8,0.3,0.3,0.3,0.03) gray(0.2) blur(0.5,0.1,0.8)".
// "none" or an empty string yields the empty op list.
inline std::vector<AugOp> parse_ops(const std::string& text) {
  std::vector<AugOp> ops;
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < text.size() && (std::isspace(static_cast<unsigned char>(text[pos])) || text[pos] == ';'))
      ++pos;
  };
  skip_ws();
  if (text.substr(pos) == "none") return ops;
  while (pos < text.size()) {
    auto open = text.find('(', pos);
    if (open == std::string::npos) throw ParameterError("augmentation op without arguments: " + text.substr(pos));
    auto close = text.find(')', open);
    if (close == std::string::npos) throw ParameterError("unterminated augmentation op: " + text.substr(pos));
    std::string name = text.substr(pos, open - pos);
    std::vector<double> args;
    std::istringstream as(text.substr(open + 1, close - open - 1));
    std::string tok;
    while (std::getline(as, tok, ',')) {
      try {
        args.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ParameterError("bad numeric argument '" + tok + "' for op " + name);
      }
    }
    auto arg = [&](std::size_t i, double dflt) { return i < args.size() ? args[i] : dflt; };
    AugOp op;
    if (name == "crop") op = make_crop(arg(0, 0.2), arg(1, 1.0), arg(2, 0.3));
    else if (name == "flip") op = make_flip(arg(0, 0.5));
    else if (name == "jitter") op = make_jitter(arg(0, 0.8), arg(1, 0.3), arg(2, 0.3), arg(3, 0.3), arg(4, 0.03));
    else if (name == "gray") op = make_gray(arg(0, 0.2));
    else if (name == "blur") op = make_blur(arg(0, 0.5), arg(1, 0.1), arg(2, 0.8));
    else throw ParameterError("unknown augmentation op '" + name + "'");
    op.validate();
    ops.push_back(op);
    pos = close + 1;
    skip_ws();
  }
  return ops;
}

struct AugmentationPipeline {
  std::vector<std::vector<AugOp>> per_modality;

  static AugmentationPipeline standard(std::size_t num_modalities = 2) {
    return {std::vector<std::vector<AugOp>>(num_modalities, default_ops())};
  }
  static AugmentationPipeline identity(std::size_t num_modalities = 2) {
    return {std::vector<std::vector<AugOp>>(num_modalities)};
  }

  // Copy with every op called `op_name` removed from `modality` ("All \ {crop}").
  AugmentationPipeline without(std::size_t modality, const std::string& op_name) const {
    AugmentationPipeline out = *this;
    auto& ops = out.per_modality.at(modality);
    std::erase_if(ops, [&](const AugOp& o) { return o.name() == op_name; });
    return out;
  }

  void validate() const {
    for (const auto& ops : per_modality)
      for (const auto& op : ops) op.validate();
  }
};

// ---------------------------------------------------------------------------
// Individual image ops

namespace ops {

inline float sample_bilinear(const Image& img, double y, double x, int c) {
  y = std::clamp(y, 0.0, img.height - 1.0);
  x = std::clamp(x, 0.0, img.width - 1.0);
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const float fy = static_cast<float>(y - y0);
  const float fx = static_cast<float>(x - x0);
  const float top = img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx;
  const float bot = img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx;
  return top * (1 - fy) + bot * fy;
}

struct CropWindow {
  int y0 = 0, x0 = 0, h = 0, w = 0;
};

inline double visible_fraction(const PixelMask& fg, const CropWindow& win, std::size_t total) {
  if (total == 0) return 1.0;
  std::size_t in = 0;
  for (int y = win.y0; y < win.y0 + win.h; ++y)
    for (int x = win.x0; x < win.x0 + win.w; ++x) in += fg.at(y, x) != 0;
  return static_cast<double>(in) / static_cast<double>(total);
}

// Random resized crop back to the input resolution. Windows are re-drawn up
// to 10 times until at least `min_visible` of the foreground survives; the
// full frame is the fallback.
inline Image random_resized_crop(const Image& img, const AugOp& op, Rng& rng) {
  const PixelMask fg = foreground_mask(img);
  const std::size_t total = fg.count();
  const double area = static_cast<double>(img.height) * img.width;
  CropWindow win{0, 0, img.height, img.width};
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(rng, op.scale_min, op.scale_max);
    const double log_ratio = uniform(rng, std::log(op.ratio_min), std::log(op.ratio_max));
    const double ratio = std::exp(log_ratio);
    const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w < 1 || h < 1 || w > img.width || h > img.height) continue;
    CropWindow cand{static_cast<int>(uniform_index(rng, static_cast<std::size_t>(img.height - h) + 1)),
                    static_cast<int>(uniform_index(rng, static_cast<std::size_t>(img.width - w) + 1)), h, w};
    if (visible_fraction(fg, cand, total) >= op.min_visible) {
      win = cand;
      break;
    }
  }
  Image out(img.height, img.width);
  const double sy = static_cast<double>(win.h) / img.height;
  const double sx = static_cast<double>(win.w) / img.width;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double src_y = win.y0 + (y + 0.5) * sy - 0.5;
      const double src_x = win.x0 + (x + 0.5) * sx - 0.5;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = sample_bilinear(img, src_y, src_x, c);
    }
  return out;
}

inline void hflip(Image& img) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width / 2; ++x)
      for (int c = 0; c < 3; ++c) std::swap(img.at(y, x, c), img.at(y, img.width - 1 - x, c));
}

inline float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

inline void grayscale(Image& img) {
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    const float l = luma(img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]);
    img.pixels[i] = img.pixels[i + 1] = img.pixels[i + 2] = l;
  }
}

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0.0f;
  if (d <= 0) {
    h = 0;
    return;
  }
  if (mx == r) h = std::fmod((g - b) / d, 6.0f);
  else if (mx == g) h = (b - r) / d + 2.0f;
  else h = (r - g) / d + 4.0f;
  h /= 6.0f;
  if (h < 0) h += 1.0f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float hh = h * 6.0f;
  const int i = static_cast<int>(std::floor(hh)) % 6;
  const float f = hh - std::floor(hh);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

inline void color_jitter(Image& img, const AugOp& op, Rng& rng) {
  const float bf = static_cast<float>(uniform(rng, std::max(0.0, 1 - op.brightness), 1 + op.brightness));
  const float cf = static_cast<float>(uniform(rng, std::max(0.0, 1 - op.contrast), 1 + op.contrast));
  const float sf = static_cast<float>(uniform(rng, std::max(0.0, 1 - op.saturation), 1 + op.saturation));
  const float hs = static_cast<float>(uniform(rng, -op.hue, op.hue));
  auto clamp01 = [](float v) { return std::clamp(v, 0.0f, 1.0f); };

  for (auto& v : img.pixels) v = clamp01(v * bf);
  double mean = 0;
  for (std::size_t i = 0; i < img.pixels.size(); i += 3)
    mean += luma(img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]);
  const float m = static_cast<float>(mean / (img.pixels.size() / 3));
  for (auto& v : img.pixels) v = clamp01((v - m) * cf + m);
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    float& r = img.pixels[i];
    float& g = img.pixels[i + 1];
    float& b = img.pixels[i + 2];
    const float l = luma(r, g, b);
    r = clamp01((r - l) * sf + l);
    g = clamp01((g - l) * sf + l);
    b = clamp01((b - l) * sf + l);
    if (hs != 0.0f) {
      float h, s, v;
      rgb_to_hsv(r, g, b, h, s, v);
      h = std::fmod(h + hs + 1.0f, 1.0f);
      hsv_to_rgb(h, s, v, r, g, b);
    }
  }
}

inline void gaussian_blur(Image& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(static_cast<std::size_t>(2 * radius + 1));
  float sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : k) v /= sum;
  auto reflect = [](int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
    return std::clamp(i, 0, n - 1);
  };
  Image tmp(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] * img.at(y, reflect(x + i, img.width), c);
        tmp.at(y, x, c) = acc;
      }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] * tmp.at(reflect(y + i, img.height), x, c);
        img.at(y, x, c) = acc;
      }
}

}  // namespace ops

inline Image apply_ops(const Image& input, const std::vector<AugOp>& op_list, Rng& rng) {
  Image img = input;
  for (const auto& op : op_list) {
    switch (op.kind) {
      case OpKind::Crop: img = ops::random_resized_crop(img, op, rng); break;
      case OpKind::Flip:
        if (bernoulli(rng, op.p)) ops::hflip(img);
        break;
      case OpKind::Jitter:
        if (bernoulli(rng, op.p)) ops::color_jitter(img, op, rng);
        break;
      case OpKind::Gray:
        if (bernoulli(rng, op.p)) ops::grayscale(img);
        break;
      case OpKind::Blur:
        if (bernoulli(rng, op.p)) ops::gaussian_blur(img, uniform(rng, op.sigma_min, op.sigma_max));
        break;
    }
  }
  return img;
}

// Applies the pipeline to every present modality with an independent stream
// per modality. Deterministic in (sample, pipeline, seed).
inline MultimodalSample augment(const MultimodalSample& x, const AugmentationPipeline& pipeline,
                                std::uint64_t seed) {
  if (pipeline.per_modality.size() != x.num_modalities())
    throw ParameterError("pipeline declares " + std::to_string(pipeline.per_modality.size()) +
                         " modalities, sample has " + std::to_string(x.num_modalities()));
  pipeline.validate();
  MultimodalSample out;
  out.labels = x.labels;
  out.modalities.resize(x.num_modalities());
  for (std::size_t m = 0; m < x.num_modalities(); ++m) {
    if (!x.modalities[m]) continue;
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(m)}));
    out.modalities[m] = apply_ops(*x.modalities[m], pipeline.per_modality[m], rng);
  }
  return out;
}

// Keeps modality `index` and empties every other slot.
inline MultimodalSample project(const MultimodalSample& x, std::size_t index) {
  if (index >= x.num_modalities())
    throw ParameterError("projection index " + std::to_string(index) + " out of range for " +
                         std::to_string(x.num_modalities()) + " modalities");
  MultimodalSample out;
  out.labels = x.labels;
  out.modalities.resize(x.num_modalities());
  out.modalities[index] = x.modalities[index];
  return out;
}

}  // namespace infmask::augment
