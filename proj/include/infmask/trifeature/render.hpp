#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "infmask/core/image.hpp"
#include "infmask/core/rng.hpp"
#include "infmask/core/types.hpp"
#include "infmask/trifeature/registry.hpp"

namespace infmask::trifeature {

struct FactorLabel {
  int shape = 0;
  int texture = 0;
  int color = 0;

  bool valid() const {
    auto in = [](int v) { return v >= 0 && v < kNumCategories; };
    return in(shape) && in(texture) && in(color);
  }
  // Index into the 10x10x10 combination grid.
  int combination_id() const { return (shape * kNumCategories + texture) * kNumCategories + color; }
  static FactorLabel from_combination(int id) {
    return {id / (kNumCategories * kNumCategories), (id / kNumCategories) % kNumCategories,
            id % kNumCategories};
  }
  bool operator==(const FactorLabel&) const = default;
};

struct CanvasGeometry {
  int canvas = 64;
  int bbox = 37;

  static CanvasGeometry desk() { return {64, 37}; }
  static CanvasGeometry reference() { return {224, 128}; }

  void validate() const {
    if (bbox < 4) throw ConfigError("bounding box must be at least 4 px, got " + std::to_string(bbox));
    if (canvas < bbox)
      throw ConfigError("canvas (" + std::to_string(canvas) + " px) smaller than bounding box (" +
                        std::to_string(bbox) + " px)");
  }
};

struct Pose {
  double rotation_shape = 0.0;    // degrees
  double rotation_texture = 0.0;  // degrees
  int offset_x = 0;               // top-left of the bounding box
  int offset_y = 0;
};

struct RenderedInstance {
  Image image;
  PixelMask shape_mask;
  FactorLabel factors;
  Pose pose;
};

inline constexpr double kMaxRotationDeg = 45.0;

inline Pose sample_pose(std::uint64_t seed, const CanvasGeometry& geom) {
  Rng rng(seed);
  Pose p;
  p.rotation_shape = uniform(rng, -kMaxRotationDeg, kMaxRotationDeg);
  p.rotation_texture = uniform(rng, -kMaxRotationDeg, kMaxRotationDeg);
  const int slack = geom.canvas - geom.bbox;
  p.offset_x = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(slack) + 1));
  p.offset_y = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(slack) + 1));
  return p;
}

inline RenderedInstance render_with_pose(const FactorLabel& factors, const Pose& pose,
                                         const CanvasGeometry& geom) {
  geom.validate();
  if (!factors.valid()) throw ConfigError("factor ids must lie in [0, 9]");

  RenderedInstance out;
  out.factors = factors;
  out.pose = pose;
  out.image = Image(geom.canvas, geom.canvas);
  out.shape_mask = PixelMask(geom.canvas, geom.canvas);

  const Polygon poly = shape_polygon(factors.shape);
  const double half = geom.bbox / 2.0;
  const double cx = pose.offset_x + half;
  const double cy = pose.offset_y + half;
  const double ts = std::numbers::pi * pose.rotation_shape / 180.0;
  const double tt = std::numbers::pi * pose.rotation_texture / 180.0;
  const double cs = std::cos(ts), ss = std::sin(ts);
  const double ct = std::cos(tt), st = std::sin(tt);
  const double tex_scale = kTextureReferenceBox / geom.bbox;
  const auto& rgb = kColors[static_cast<std::size_t>(factors.color)];

  for (int py = pose.offset_y; py < pose.offset_y + geom.bbox; ++py) {
    for (int px = pose.offset_x; px < pose.offset_x + geom.bbox; ++px) {
      const double dx = (px + 0.5) - cx;
      const double dy = (py + 0.5) - cy;
      // inverse rotation into the shape frame
      const double sx = (cs * dx + ss * dy) / half;
      const double sy = (-ss * dx + cs * dy) / half;
      if (!point_in_polygon(poly, sx, sy)) continue;
      out.shape_mask.at(py, px) = 1;
      const double u = (ct * dx + st * dy) * tex_scale;
      const double v = (-st * dx + ct * dy) * tex_scale;
      const float level = texture_on(factors.texture, u, v) ? 1.0f : kTextureOffLevel;
      for (int c = 0; c < 3; ++c) out.image.at(py, px, c) = rgb[static_cast<std::size_t>(c)] * level;
    }
  }
  return out;
}

// Deterministic in (factors, seed, geometry).
inline RenderedInstance render_instance(const FactorLabel& factors, std::uint64_t seed,
                                        const CanvasGeometry& geom) {
  geom.validate();
  return render_with_pose(factors, sample_pose(seed, geom), geom);
}

// Quantise to the 8-bit grid used on disk so in-memory and reloaded images agree.
inline void quantize_u8(Image& img) {
  for (auto& v : img.pixels) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
}

}  // namespace infmask::trifeature
