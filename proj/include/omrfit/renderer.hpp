#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "omrfit/body_model.hpp"
#include "omrfit/types.hpp"

namespace omrfit {

// Per-pixel part ids, 0 = background, 1..6 = BodyPart. Row 0 is the top of
// the image (y = +1).
struct LabelImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> labels;

  LabelImage() = default;
  LabelImage(int w, int h) : width(w), height(h), labels(static_cast<std::size_t>(w) * h, 0) {}
  std::uint8_t& at(int row, int col) { return labels[static_cast<std::size_t>(row) * width + col]; }
  std::uint8_t at(int row, int col) const { return labels[static_cast<std::size_t>(row) * width + col]; }
  bool operator==(const LabelImage&) const = default;
};

// D = 6 channels of H x W values in [0, 1]. Channel index = part id - 1.
struct PartMaskStack {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  PartMaskStack() = default;
  PartMaskStack(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(kNumParts) * w * h, fill) {}
  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  std::span<double> channel(int part) { return {data.data() + (part - 1) * pixels(), pixels()}; }
  std::span<const double> channel(int part) const { return {data.data() + (part - 1) * pixels(), pixels()}; }
  double& at(int part, int row, int col) { return channel(part)[static_cast<std::size_t>(row) * width + col]; }
  double at(int part, int row, int col) const { return channel(part)[static_cast<std::size_t>(row) * width + col]; }
};

enum class RenderMode { hard, soft };

struct RenderConfig {
  int resolution = 64;
  // Sharpness of the per-face sigmoid on squared boundary distance, in
  // normalized image units.
  double gamma = 40.0;
  RenderMode mode = RenderMode::soft;

  void validate() const;
};

// Pixel centre in normalized image coordinates.
inline double pixel_x(int col, int width) { return -1.0 + (col + 0.5) * 2.0 / width; }
inline double pixel_y(int row, int height) { return 1.0 - (row + 0.5) * 2.0 / height; }

// Z-buffered rasterization; smaller depth is nearer. Zero-area faces are
// skipped.
LabelImage rasterize_labels(const Points2& vertices2d, std::span<const double> depth, const Faces& faces,
                            std::span<const int> face_part, int width, int height);

PartMaskStack masks_from_labels(const LabelImage& labels);
// Label of the first channel >= 0.5, else background.
LabelImage labels_from_masks(const PartMaskStack& masks);

PartMaskStack rasterize_hard(const Points2& vertices2d, std::span<const double> depth, const Faces& faces,
                             std::span<const int> face_part, int width, int height);
PartMaskStack rasterize_hard(const BodyModel& model, const Points2& vertices2d, std::span<const double> depth,
                             int resolution);

// One face's contribution to one pixel.
struct SoftFragment {
  int face;
  double z;        // gamma * sgn * d^2
  double coverage; // A = D * T after occlusion by nearer faces
  double keep;     // 1 - A
  int edge;
  int tied;  // edges at the same minimum distance, as a bit mask
  double t, rx, ry;
};

struct SoftRender {
  PartMaskStack masks;
  // Fragments of pixel p are fragments[offsets[p] .. offsets[p + 1]),
  // nearest first.
  std::vector<SoftFragment> fragments;
  std::vector<std::size_t> offsets;
};

// D_j(p) = sigmoid(gamma * sgn * d^2) for face j and pixel p. Faces are
// composited front to back by centroid depth (smaller is nearer): face j's
// coverage A_j = D_j * T_j, T_j = prod (1 - D_k) over nearer faces k of
// other parts, and S_i(p) = 1 - prod_{j in i} (1 - A_j). With no other part
// in front this is the plain per-part union. Pairs with gamma * d^2 beyond
// the cutoff outside the face are dropped (D below 1e-13).
SoftRender rasterize_soft(const Points2& vertices2d, std::span<const double> depth, const Faces& faces,
                          std::span<const int> face_part, const RenderConfig& config);
SoftRender rasterize_soft(const BodyModel& model, const Points2& vertices2d, std::span<const double> depth,
                          const RenderConfig& config);

struct SoftGrad {
  Points2 vertices;
  Vector depth;
};

// Gradient with respect to vertices2d and depth given dLoss/dS laid out
// like masks. The depth ordering is piecewise constant, so the depth
// gradient is zero.
SoftGrad rasterize_soft_backward(const Points2& vertices2d, std::span<const double> depth, const Faces& faces,
                                 std::span<const int> face_part, const RenderConfig& config, const SoftRender& forward,
                                 const PartMaskStack& grad);

inline constexpr double kSoftCutoff = 30.0;

// Binary PGM ("P5", maxval 255).
std::string encode_pgm(int width, int height, std::span<const std::uint8_t> pixels);
struct PgmImage {
  int width = 0;
  int height = 0;
  int maxval = 255;
  std::vector<std::uint8_t> pixels;
  std::size_t data_offset = 0;
};
PgmImage decode_pgm(std::string_view bytes);

std::string encode_label_pgm(const LabelImage& labels);
LabelImage decode_label_pgm(std::string_view bytes);

void write_label_pgm(const std::filesystem::path& path, const LabelImage& labels);
LabelImage read_label_pgm(const std::filesystem::path& path);

// D files <sample>_part<d>.pgm holding round(255 * p).
void write_soft_pgms(const std::filesystem::path& dir, const std::string& sample, const PartMaskStack& masks);
PartMaskStack read_soft_pgms(const std::filesystem::path& dir, const std::string& sample);

inline std::string label_pgm_name(const std::string& sample) { return sample + "_labels.pgm"; }
inline std::string part_pgm_name(const std::string& sample, int part) {
  return sample + "_part" + std::to_string(part) + ".pgm";
}

}  // namespace omrfit
