#include "omrfit/renderer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "omrfit/errors.hpp"

namespace omrfit {

namespace {

double cross2(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

struct PixelRange {
  int c0, c1, r0, r1;
  bool empty() const { return c0 > c1 || r0 > r1; }
};

// Pixels whose centres fall inside [xmin, xmax] x [ymin, ymax].
PixelRange pixel_range(double xmin, double xmax, double ymin, double ymax, int width, int height) {
  PixelRange r;
  r.c0 = std::max(0, static_cast<int>(std::ceil((xmin + 1.0) * width / 2.0 - 0.5)));
  r.c1 = std::min(width - 1, static_cast<int>(std::floor((xmax + 1.0) * width / 2.0 - 0.5)));
  r.r0 = std::max(0, static_cast<int>(std::ceil((1.0 - ymax) * height / 2.0 - 0.5)));
  r.r1 = std::min(height - 1, static_cast<int>(std::floor((1.0 - ymin) * height / 2.0 - 0.5)));
  return r;
}

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Signed squared distance from a pixel to a triangle boundary plus what the
// backward pass needs to differentiate it.
struct BoundaryDistance {
  double dist2;
  bool inside;
  int edge;   // closest edge runs from corner edge to corner (edge + 1) % 3
  double t;   // clamped segment parameter of the closest point
  double rx, ry;  // p - closest point
  int tied;   // bit e set when edge e is also at the minimum distance
};

struct EdgePoint {
  double t, rx, ry;
};

EdgePoint edge_point(double px, double py, const double (&x)[3], const double (&y)[3], int e) {
  const int i = e, j = (e + 1) % 3;
  const double ex = x[j] - x[i], ey = y[j] - y[i];
  const double len2 = ex * ex + ey * ey;
  double t = len2 > 0.0 ? ((px - x[i]) * ex + (py - y[i]) * ey) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return {t, px - (x[i] + t * ex), py - (y[i] + t * ey)};
}

BoundaryDistance boundary_distance(double px, double py, const double (&x)[3], const double (&y)[3], double area2) {
  BoundaryDistance out{std::numeric_limits<double>::infinity(), false, 0, 0.0, 0.0, 0.0, 0};
  const double w0 = cross2(x[1] - px, y[1] - py, x[2] - px, y[2] - py);
  const double w1 = cross2(x[2] - px, y[2] - py, x[0] - px, y[0] - py);
  const double w2 = cross2(x[0] - px, y[0] - py, x[1] - px, y[1] - py);
  out.inside = area2 > 0.0 ? (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0) : (w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0);
  double d2[3];
  for (int e = 0; e < 3; ++e) {
    const EdgePoint q = edge_point(px, py, x, y, e);
    d2[e] = q.rx * q.rx + q.ry * q.ry;
    if (d2[e] < out.dist2) out = {d2[e], out.inside, e, q.t, q.rx, q.ry, 0};
  }
  // On the medial axis d^2 has a kink; the backward pass averages the tied
  // edges, which is the symmetric derivative there.
  for (int e = 0; e < 3; ++e)
    if (d2[e] - out.dist2 <= 1e-12 * out.dist2) out.tied |= 1 << e;
  return out;
}

struct FaceCorners {
  double x[3], y[3];
  double area2;
};

FaceCorners corners(const Points2& v, const Faces& faces, int f) {
  FaceCorners c;
  for (int k = 0; k < 3; ++k) {
    c.x[k] = v(faces(f, k), 0);
    c.y[k] = v(faces(f, k), 1);
  }
  c.area2 = cross2(c.x[1] - c.x[0], c.y[1] - c.y[0], c.x[2] - c.x[0], c.y[2] - c.y[0]);
  return c;
}

void check_inputs(const Points2& v, const Faces& faces, std::span<const int> face_part) {
  require_dims(static_cast<Eigen::Index>(face_part.size()) == faces.rows(), "face_part length != face count");
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    for (int k = 0; k < 3; ++k)
      require_dims(faces(f, k) >= 0 && faces(f, k) < v.rows(), "face index out of range");
}

constexpr double kDegenerateArea = 1e-14;

}  // namespace

void RenderConfig::validate() const {
  if (resolution < 8) throw ConfigError("render resolution must be >= 8");
  if (!(gamma > 0.0)) throw ConfigError("render sharpness gamma must be > 0");
}

LabelImage rasterize_labels(const Points2& v, std::span<const double> depth, const Faces& faces,
                            std::span<const int> face_part, int width, int height) {
  check_inputs(v, faces, face_part);
  require_dims(static_cast<Eigen::Index>(depth.size()) == v.rows(), "depth length != vertex count");
  LabelImage img(width, height);
  std::vector<double> zbuf(static_cast<std::size_t>(width) * height, std::numeric_limits<double>::infinity());
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const FaceCorners c = corners(v, faces, static_cast<int>(f));
    if (std::abs(c.area2) < kDegenerateArea) continue;
    const auto range = pixel_range(std::min({c.x[0], c.x[1], c.x[2]}), std::max({c.x[0], c.x[1], c.x[2]}),
                                   std::min({c.y[0], c.y[1], c.y[2]}), std::max({c.y[0], c.y[1], c.y[2]}), width,
                                   height);
    if (range.empty()) continue;
    const double z[3] = {depth[faces(f, 0)], depth[faces(f, 1)], depth[faces(f, 2)]};
    for (int r = range.r0; r <= range.r1; ++r) {
      const double py = pixel_y(r, height);
      for (int col = range.c0; col <= range.c1; ++col) {
        const double px = pixel_x(col, width);
        const double b0 = cross2(c.x[1] - px, c.y[1] - py, c.x[2] - px, c.y[2] - py) / c.area2;
        const double b1 = cross2(c.x[2] - px, c.y[2] - py, c.x[0] - px, c.y[0] - py) / c.area2;
        const double b2 = 1.0 - b0 - b1;
        if (b0 < 0.0 || b1 < 0.0 || b2 < 0.0) continue;
        const double zp = b0 * z[0] + b1 * z[1] + b2 * z[2];
        const std::size_t idx = static_cast<std::size_t>(r) * width + col;
        if (zp < zbuf[idx]) {
          zbuf[idx] = zp;
          img.labels[idx] = static_cast<std::uint8_t>(face_part[f]);
        }
      }
    }
  }
  return img;
}

PartMaskStack masks_from_labels(const LabelImage& labels) {
  PartMaskStack s(labels.width, labels.height);
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    const int l = labels.labels[i];
    if (l >= 1 && l <= kNumParts) s.channel(l)[i] = 1.0;
  }
  return s;
}

LabelImage labels_from_masks(const PartMaskStack& masks) {
  LabelImage img(masks.width, masks.height);
  for (std::size_t i = 0; i < masks.pixels(); ++i) {
    for (int p = 1; p <= kNumParts; ++p) {
      if (masks.channel(p)[i] >= 0.5) {
        img.labels[i] = static_cast<std::uint8_t>(p);
        break;
      }
    }
  }
  return img;
}

PartMaskStack rasterize_hard(const Points2& v, std::span<const double> depth, const Faces& faces,
                             std::span<const int> face_part, int width, int height) {
  return masks_from_labels(rasterize_labels(v, depth, faces, face_part, width, height));
}

PartMaskStack rasterize_hard(const BodyModel& model, const Points2& v, std::span<const double> depth, int resolution) {
  return rasterize_hard(v, depth, model.faces, model.face_part, resolution, resolution);
}

namespace {

// Per-face state shared by the forward and backward soft passes.
struct SoftFace {
  FaceCorners c;
  PixelRange range;
  double depth;  // centroid depth, smaller is nearer
  bool skip;
};

SoftFace soft_face(const Points2& v, std::span<const double> depth, const Faces& faces, int f, double reach, int w,
                   int h) {
  SoftFace sf;
  sf.c = corners(v, faces, f);
  sf.skip = std::abs(sf.c.area2) < kDegenerateArea;
  sf.depth = (depth[faces(f, 0)] + depth[faces(f, 1)] + depth[faces(f, 2)]) / 3.0;
  const auto& c = sf.c;
  sf.range = pixel_range(std::min({c.x[0], c.x[1], c.x[2]}) - reach, std::max({c.x[0], c.x[1], c.x[2]}) + reach,
                         std::min({c.y[0], c.y[1], c.y[2]}) - reach, std::max({c.y[0], c.y[1], c.y[2]}) + reach, w, h);
  sf.skip = sf.skip || sf.range.empty();
  return sf;
}

void check_soft_inputs(const Points2& v, std::span<const double> depth, const Faces& faces,
                       std::span<const int> face_part, const RenderConfig& config) {
  config.validate();
  check_inputs(v, faces, face_part);
  require_dims(static_cast<Eigen::Index>(depth.size()) == v.rows(), "depth length != vertex count");
  for (int p : face_part) require_dims(p >= 1 && p <= kNumParts, "face part label outside 1..6");
}

}  // namespace

SoftRender rasterize_soft(const Points2& v, std::span<const double> depth, const Faces& faces,
                          std::span<const int> face_part, const RenderConfig& config) {
  check_soft_inputs(v, depth, faces, face_part, config);
  const int w = config.resolution, h = config.resolution;
  const double gamma = config.gamma;
  const double reach = std::sqrt(kSoftCutoff / gamma);
  SoftRender out;
  out.masks = PartMaskStack(w, h);
  const std::size_t npix = out.masks.pixels();

  struct Raw {
    std::size_t pixel;
    double depth;
    SoftFragment frag;
  };
  std::vector<Raw> raw;
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const SoftFace sf = soft_face(v, depth, faces, static_cast<int>(f), reach, w, h);
    if (sf.skip) continue;
    for (int r = sf.range.r0; r <= sf.range.r1; ++r) {
      const double py = pixel_y(r, h);
      for (int col = sf.range.c0; col <= sf.range.c1; ++col) {
        const auto bd = boundary_distance(pixel_x(col, w), py, sf.c.x, sf.c.y, sf.c.area2);
        const double z = (bd.inside ? 1.0 : -1.0) * gamma * bd.dist2;
        if (z < -kSoftCutoff) continue;
        const std::size_t idx = static_cast<std::size_t>(r) * w + col;
        raw.push_back({idx, sf.depth, {static_cast<int>(f), z, 0.0, 1.0, bd.edge, bd.tied, bd.t, bd.rx, bd.ry}});
      }
    }
  }

  // Bucket by pixel keeping face order, then order each bucket by depth.
  out.offsets.assign(npix + 1, 0);
  for (const Raw& q : raw) ++out.offsets[q.pixel + 1];
  for (std::size_t p = 0; p < npix; ++p) out.offsets[p + 1] += out.offsets[p];
  std::vector<std::size_t> cursor(out.offsets.begin(), out.offsets.end() - 1);
  std::vector<std::size_t> slot(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) slot[cursor[raw[k].pixel]++] = k;
  out.fragments.resize(raw.size());
  for (std::size_t p = 0; p < npix; ++p) {
    const auto b = slot.begin() + static_cast<std::ptrdiff_t>(out.offsets[p]);
    const auto e = slot.begin() + static_cast<std::ptrdiff_t>(out.offsets[p + 1]);
    std::stable_sort(b, e, [&](std::size_t x, std::size_t y) { return raw[x].depth < raw[y].depth; });
    double near_all = 0.0;
    double near_part[kNumParts] = {};
    double log_keep[kNumParts] = {};
    for (auto it = b; it != e; ++it) {
      SoftFragment& fr = out.fragments[static_cast<std::size_t>(it - slot.begin())];
      fr = raw[*it].frag;
      const int part = face_part[fr.face] - 1;
      const double log_t = near_all - near_part[part];
      const double tr = std::exp(log_t);
      fr.coverage = sigmoid(fr.z) * tr;
      // 1 - D T = (1 - T) + T (1 - D)
      fr.keep = -std::expm1(log_t) + tr * sigmoid(-fr.z);
      log_keep[part] += fr.coverage < 0.5 ? std::log1p(-fr.coverage) : std::log(fr.keep);
      const double l = -softplus(fr.z);  // log(1 - D)
      near_all += l;
      near_part[part] += l;
    }
    for (int part = 0; part < kNumParts; ++part) out.masks.data[part * npix + p] = -std::expm1(log_keep[part]);
  }
  return out;
}

SoftRender rasterize_soft(const BodyModel& model, const Points2& v, std::span<const double> depth,
                          const RenderConfig& config) {
  return rasterize_soft(v, depth, model.faces, model.face_part, config);
}

SoftGrad rasterize_soft_backward(const Points2& v, std::span<const double> depth, const Faces& faces,
                                 std::span<const int> face_part, const RenderConfig& config, const SoftRender& fwd,
                                 const PartMaskStack& grad) {
  check_soft_inputs(v, depth, faces, face_part, config);
  const int w = config.resolution, h = config.resolution;
  require_dims(grad.width == w && grad.height == h, "soft mask gradient resolution mismatch");
  const std::size_t npix = grad.pixels();
  require_dims(fwd.offsets.size() == npix + 1, "soft render does not match the gradient resolution");
  const double gamma = config.gamma;

  SoftGrad out;
  out.vertices = Points2::Zero(v.rows(), 2);
  out.depth = Vector::Zero(v.rows());
  std::vector<double> before;
  for (std::size_t p = 0; p < npix; ++p) {
    const std::size_t b = fwd.offsets[p], e = fwd.offsets[p + 1];
    if (b == e) continue;
    // Q_k = prod of (1 - A) over the other fragments of k's part, split
    // into the products before and after k.
    before.resize(e - b);
    double run[kNumParts] = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
    for (std::size_t k = b; k < e; ++k) {
      const int part = face_part[fwd.fragments[k].face] - 1;
      before[k - b] = run[part];
      run[part] *= fwd.fragments[k].keep;
    }
    double after[kNumParts] = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
    // Sums of g Q A over farther fragments, overall and per part.
    double far_all = 0.0;
    double far_part[kNumParts] = {};
    for (std::size_t k = e; k-- > b;) {
      const SoftFragment& fr = fwd.fragments[k];
      const int part = face_part[fr.face] - 1;
      const double g = grad.data[part * npix + p];
      const double q = before[k - b] * after[part];
      after[part] *= fr.keep;
      const double d = sigmoid(fr.z);
      // dA_k/dz_k = A_k (1 - D_k); dA_j/dz_k = -A_j D_k for farther j of
      // other parts.
      const double dz = g * q * fr.coverage * sigmoid(-fr.z) - d * (far_all - far_part[part]);
      const double contrib = g * q * fr.coverage;
      far_all += contrib;
      far_part[part] += contrib;
      if (dz == 0.0) continue;
      // d(d^2)/d(corner i) = -2 r (1 - t), d(d^2)/d(corner j) = -2 r t.
      const double c = dz * (fr.z >= 0.0 ? 1.0 : -1.0) * gamma * -2.0;
      auto add = [&](int e, const EdgePoint& q, double weight) {
        const int i = faces(fr.face, e), j = faces(fr.face, (e + 1) % 3);
        out.vertices(i, 0) += weight * c * (1.0 - q.t) * q.rx;
        out.vertices(i, 1) += weight * c * (1.0 - q.t) * q.ry;
        out.vertices(j, 0) += weight * c * q.t * q.rx;
        out.vertices(j, 1) += weight * c * q.t * q.ry;
      };
      if (fr.tied == (1 << fr.edge)) {
        add(fr.edge, {fr.t, fr.rx, fr.ry}, 1.0);
      } else {
        const FaceCorners fc = corners(v, faces, fr.face);
        const double px = pixel_x(static_cast<int>(p % w), w), py = pixel_y(static_cast<int>(p / w), h);
        const double weight = 1.0 / std::popcount(static_cast<unsigned>(fr.tied));
        for (int e = 0; e < 3; ++e)
          if (fr.tied & (1 << e)) add(e, edge_point(px, py, fc.x, fc.y, e), weight);
      }
    }
  }
  return out;
}

std::string encode_pgm(int width, int height, std::span<const std::uint8_t> pixels) {
  require_dims(pixels.size() == static_cast<std::size_t>(width) * height, "pgm pixel count mismatch");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  return out;
}

PgmImage decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      const char ch = bytes[pos];
      if (ch == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    long value = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      value = value * 10 + (bytes[pos] - '0');
      if (value > 1'000'000) throw FormatError(std::string("pgm ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("pgm: expected ") + what, start);
    return static_cast<int>(value);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("pgm: missing P5 magic", 0);
  pos = 2;
  PgmImage img;
  img.width = read_int("width");
  img.height = read_int("height");
  img.maxval = read_int("maxval");
  if (img.width <= 0 || img.height <= 0) throw FormatError("pgm: empty image", pos);
  if (img.maxval < 1 || img.maxval > 255) throw FormatError("pgm: maxval must be in 1..255", pos);
  if (pos >= bytes.size() || !(bytes[pos] == ' ' || bytes[pos] == '\n' || bytes[pos] == '\t' || bytes[pos] == '\r'))
    throw FormatError("pgm: expected whitespace after header", pos);
  ++pos;
  img.data_offset = pos;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (bytes.size() - pos < n) throw FormatError("pgm: truncated pixel data", bytes.size());
  if (bytes.size() - pos > n) throw FormatError("pgm: trailing bytes after pixel data", pos + n);
  img.pixels.assign(reinterpret_cast<const std::uint8_t*>(bytes.data() + pos),
                    reinterpret_cast<const std::uint8_t*>(bytes.data() + pos + n));
  return img;
}

std::string encode_label_pgm(const LabelImage& labels) { return encode_pgm(labels.width, labels.height, labels.labels); }

LabelImage decode_label_pgm(std::string_view bytes) {
  PgmImage pgm = decode_pgm(bytes);
  for (std::size_t i = 0; i < pgm.pixels.size(); ++i)
    if (pgm.pixels[i] > kNumParts)
      throw FormatError("label value " + std::to_string(pgm.pixels[i]) + " outside 0..6", pgm.data_offset + i);
  LabelImage img;
  img.width = pgm.width;
  img.height = pgm.height;
  img.labels = std::move(pgm.pixels);
  return img;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void write_label_pgm(const std::filesystem::path& path, const LabelImage& labels) {
  write_file(path, encode_label_pgm(labels));
}

LabelImage read_label_pgm(const std::filesystem::path& path) {
  try {
    return decode_label_pgm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_soft_pgms(const std::filesystem::path& dir, const std::string& sample, const PartMaskStack& masks) {
  std::vector<std::uint8_t> px(masks.pixels());
  for (int p = 1; p <= kNumParts; ++p) {
    const auto ch = masks.channel(p);
    for (std::size_t i = 0; i < px.size(); ++i)
      px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(ch[i], 0.0, 1.0) * 255.0));
    write_file(dir / part_pgm_name(sample, p), encode_pgm(masks.width, masks.height, px));
  }
}

PartMaskStack read_soft_pgms(const std::filesystem::path& dir, const std::string& sample) {
  PartMaskStack out;
  for (int p = 1; p <= kNumParts; ++p) {
    const auto path = dir / part_pgm_name(sample, p);
    PgmImage img;
    try {
      img = decode_pgm(read_file(path));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
    if (p == 1) {
      out = PartMaskStack(img.width, img.height);
    } else if (img.width != out.width || img.height != out.height) {
      throw FormatError(path.string() + ": channel size differs from channel 1", 0);
    }
    auto ch = out.channel(p);
    for (std::size_t i = 0; i < ch.size(); ++i) ch[i] = img.pixels[i] / static_cast<double>(img.maxval);
  }
  return out;
}

}  // namespace omrfit
