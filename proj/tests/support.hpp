#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "omrfit/renderer.hpp"
#include "omrfit/rng.hpp"
#include "omrfit/types.hpp"

namespace omrfit::test {

inline Vector random_vector(Rng& rng, int n, double scale) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("omrfit_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Flat triangulated scene in normalized image coordinates.
struct Scene {
  std::string name;
  Points2 vertices = Points2(0, 2);
  Vector depth = Vector(0);
  Faces faces = Faces(0, 3);
  std::vector<int> face_part;

  std::span<const double> depth_span() const { return {depth.data(), static_cast<std::size_t>(depth.size())}; }

  // Convex polygon as a fan around its first vertex, all at one depth.
  Scene& polygon(const std::vector<Eigen::Vector2d>& corners, int part, double z) {
    const int base = static_cast<int>(vertices.rows());
    const int n = static_cast<int>(corners.size());
    vertices.conservativeResize(base + n, 2);
    depth.conservativeResize(base + n);
    for (int i = 0; i < n; ++i) {
      vertices.row(base + i) = corners[i].transpose();
      depth(base + i) = z;
    }
    for (int i = 1; i + 1 < n; ++i) {
      faces.conservativeResize(faces.rows() + 1, 3);
      faces.row(faces.rows() - 1) << base, base + i, base + i + 1;
      face_part.push_back(part);
    }
    return *this;
  }

  Scene& rect(double x0, double y0, double x1, double y1, int part, double z) {
    return polygon({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}, part, z);
  }

  Scene& ngon(Eigen::Vector2d c, double r, int n, double phase, int part, double z) {
    std::vector<Eigen::Vector2d> pts;
    for (int i = 0; i < n; ++i) {
      const double a = phase + 2.0 * std::numbers::pi * i / n;
      pts.push_back(c + r * Eigen::Vector2d(std::cos(a), std::sin(a)));
    }
    return polygon(pts, part, z);
  }
};

// The ten flat scenes the soft/hard convergence checks run on.
inline std::vector<Scene> convergence_suite() {
  std::vector<Scene> s(10);
  s[0].name = "triangle";
  s[0].polygon({{-0.5, -0.5}, {0.6, -0.4}, {0.0, 0.7}}, 2, 0.0);
  s[1].name = "square";
  s[1].rect(-0.45, -0.45, 0.45, 0.45, 1, 0.0);
  s[2].name = "rotated-square";
  s[2].ngon({0.05, -0.05}, 0.6, 4, 0.3, 3, 0.0);
  s[3].name = "two-triangles";
  s[3].polygon({{-0.7, -0.6}, {0.5, -0.5}, {-0.2, 0.6}}, 2, 0.0).polygon({{-0.3, -0.2}, {0.7, 0.1}, {0.1, 0.8}}, 4, -0.2);
  s[4].name = "quad-over-triangle";
  s[4].polygon({{-0.8, -0.7}, {0.8, -0.7}, {0.0, 0.8}}, 5, 0.1).rect(-0.3, -0.5, 0.35, 0.1, 6, -0.1);
  s[5].name = "limb";
  s[5].polygon({{-0.7, -0.45}, {-0.6, -0.55}, {0.65, 0.5}, {0.55, 0.6}}, 3, 0.0);
  s[6].name = "hexagon";
  s[6].ngon({0.0, 0.1}, 0.55, 6, 0.1, 1, 0.0);
  s[7].name = "stack";
  s[7].rect(-0.7, -0.3, 0.3, 0.5, 2, 0.2).rect(-0.4, -0.6, 0.6, 0.2, 3, 0.0).rect(-0.1, -0.1, 0.8, 0.7, 4, -0.2);
  s[8].name = "l-shape";
  s[8].rect(-0.6, -0.6, -0.2, 0.6, 6, 0.0).rect(-0.2, -0.6, 0.5, -0.25, 6, 0.0);
  s[9].name = "mixed";
  s[9].polygon({{-0.8, 0.2}, {-0.3, 0.1}, {-0.55, 0.7}}, 5, 0.0)
      .polygon({{0.2, -0.7}, {0.75, -0.6}, {0.5, -0.1}}, 5, 0.0)
      .ngon({0.0, 0.0}, 0.35, 8, 0.0, 2, -0.1);
  return s;
}

// Per-part IoU between the soft render thresholded at 0.5 and the hard
// render; parts absent from both are skipped.
inline std::vector<double> part_ious(const PartMaskStack& soft, const PartMaskStack& hard) {
  std::vector<double> out;
  for (int part = 1; part <= kNumParts; ++part) {
    long inter = 0, uni = 0;
    const auto a = soft.channel(part);
    const auto b = hard.channel(part);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const bool x = a[i] >= 0.5, y = b[i] > 0.5;
      inter += x && y;
      uni += x || y;
    }
    if (uni > 0) out.push_back(static_cast<double>(inter) / static_cast<double>(uni));
  }
  return out;
}

}  // namespace omrfit::test
