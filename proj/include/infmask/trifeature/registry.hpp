#pragma once

// Primitive registry for the synthetic three-factor images: 10 shapes,
// 10 textures, 10 colours. Everything that changes how an image looks must
// bump kRegistryVersion so stored datasets can be told apart.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

#include "infmask/core/rng.hpp"

namespace infmask::trifeature {

inline constexpr int kRegistryVersion = 1;
inline constexpr int kNumCategories = 10;

// Reference bounding box at the 64 px canvas; textures are laid out in units
// of (bbox / kTextureReferenceBox) pixels so they scale with the canvas.
inline constexpr double kTextureReferenceBox = 37.0;

struct Point {
  double x;
  double y;
};

using Polygon = std::vector<Point>;

namespace detail {

inline Polygon regular_polygon(int sides, double radius, double phase) {
  Polygon p;
  for (int k = 0; k < sides; ++k) {
    double a = phase + 2.0 * std::numbers::pi * k / sides;
    p.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  return p;
}

inline Polygon star(int points, double outer, double inner, double phase) {
  Polygon p;
  for (int k = 0; k < 2 * points; ++k) {
    double r = (k % 2 == 0) ? outer : inner;
    double a = phase + std::numbers::pi * k / points;
    p.push_back({r * std::cos(a), r * std::sin(a)});
  }
  return p;
}

}  // namespace detail

inline constexpr std::array<std::string_view, kNumCategories> kShapeNames = {
    "triangle", "square", "pentagon", "circle", "star5",
    "sparkle",  "cross",  "rhombus",  "arrow",  "semicircle"};

inline constexpr std::array<std::string_view, kNumCategories> kTextureNames = {
    "solid", "stripes", "checker", "dots",    "grid",
    "rings", "zigzag",  "blocks",  "speckle", "waves"};

inline constexpr std::array<std::string_view, kNumCategories> kColorNames = {
    "red",  "green",  "blue",   "yellow", "cyan",
    "magenta", "orange", "purple", "white", "brown"};

// Colours as linear RGB in [0, 1].
inline constexpr std::array<std::array<float, 3>, kNumCategories> kColors = {{
    {0.92f, 0.12f, 0.10f},
    {0.15f, 0.78f, 0.18f},
    {0.15f, 0.30f, 0.95f},
    {0.95f, 0.90f, 0.12f},
    {0.12f, 0.88f, 0.90f},
    {0.90f, 0.15f, 0.85f},
    {1.00f, 0.55f, 0.05f},
    {0.50f, 0.15f, 0.75f},
    {0.95f, 0.95f, 0.95f},
    {0.55f, 0.32f, 0.12f},
}};

// Brightness of "off" texture cells relative to the shape colour.
inline constexpr float kTextureOffLevel = 0.3f;

// Shape outlines in unit coordinates, all vertices within the unit disc so
// any rotation keeps the shape inside its bounding box.
inline Polygon shape_polygon(int shape_id) {
  using namespace detail;
  constexpr double pi = std::numbers::pi;
  switch (shape_id) {
    case 0: return regular_polygon(3, 1.0, -pi / 2);
    case 1: return regular_polygon(4, 1.0, pi / 4);
    case 2: return regular_polygon(5, 1.0, -pi / 2);
    case 3: return regular_polygon(48, 0.95, 0.0);
    case 4: return star(5, 1.0, 0.42, -pi / 2);
    case 5: return star(4, 1.0, 0.28, -pi / 2);
    case 6: {
      const double a = 0.33, b = 0.94;
      return {{-a, -b}, {a, -b}, {a, -a}, {b, -a}, {b, a}, {a, a},
              {a, b},   {-a, b}, {-a, a}, {-b, a}, {-b, -a}, {-a, -a}};
    }
    case 7: return {{0.0, -1.0}, {0.55, 0.0}, {0.0, 1.0}, {-0.55, 0.0}};
    case 8:
      return {{-0.95, -0.28}, {0.15, -0.28}, {0.15, -0.75}, {0.95, 0.0},
              {0.15, 0.75},   {0.15, 0.28},  {-0.95, 0.28}};
    case 9: {
      Polygon p;
      const int n = 32;
      for (int k = 0; k <= n; ++k) {
        double a = pi * k / n;  // lower half disc, shifted up to centre it
        p.push_back({0.98 * std::cos(a), 0.98 * std::sin(a) - 0.4});
      }
      return p;
    }
    default: return {};
  }
}

// Even-odd point-in-polygon test.
inline bool point_in_polygon(const Polygon& poly, double x, double y) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > y) != (b.y > y)) {
      double xc = (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x;
      if (x < xc) inside = !inside;
    }
  }
  return inside;
}

// Whether texture `texture_id` is "on" at texture-frame coordinates (u, v),
// expressed in reference texture units (pixels at the 64 px canvas).
inline bool texture_on(int texture_id, double u, double v) {
  auto fmod_pos = [](double a, double m) {
    double r = std::fmod(a, m);
    return r < 0 ? r + m : r;
  };
  switch (texture_id) {
    case 0: return true;
    case 1: return fmod_pos(v, 6.0) < 3.0;
    case 2: {
      int cu = static_cast<int>(std::floor(u / 3.0));
      int cv = static_cast<int>(std::floor(v / 3.0));
      return ((cu + cv) & 1) == 0;
    }
    case 3: {
      double du = fmod_pos(u, 6.0) - 3.0;
      double dv = fmod_pos(v, 6.0) - 3.0;
      return du * du + dv * dv > 3.2;  // holes punched in a lit field
    }
    case 4: return fmod_pos(u, 7.0) < 2.0 || fmod_pos(v, 7.0) < 2.0;
    case 5: return fmod_pos(std::sqrt(u * u + v * v), 6.0) < 3.0;
    case 6: {
      double tri = std::abs(fmod_pos(u, 8.0) - 4.0);  // triangle wave, amplitude 4
      return fmod_pos(v + tri, 7.0) < 3.0;
    }
    case 7: {
      int cu = static_cast<int>(std::floor(u / 7.0));
      int cv = static_cast<int>(std::floor(v / 7.0));
      return ((cu + cv) & 1) == 0;
    }
    case 8: {
      auto cu = static_cast<std::int64_t>(std::floor(u / 2.0));
      auto cv = static_cast<std::int64_t>(std::floor(v / 2.0));
      auto h = splitmix64(static_cast<std::uint64_t>(cu) * 0x9e3779b1ULL ^
                          static_cast<std::uint64_t>(cv) * 0x85ebca77ULL);
      return (h & 0xff) < 110;
    }
    case 9: return fmod_pos(u + 2.5 * std::sin(v / 2.2), 6.0) < 3.0;
    default: return false;
  }
}

}  // namespace infmask::trifeature
