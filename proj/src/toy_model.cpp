#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "omrfit/body_model.hpp"
#include "omrfit/errors.hpp"
#include "omrfit/rng.hpp"

namespace omrfit {

namespace {

constexpr double kPi = std::numbers::pi;

struct Layout {
  int n_spine = 2, n_arm = 1, n_leg = 1;
  Points3 joints;
  std::vector<int> parents;
  std::vector<int> spine;  // pelvis first, neck last
  std::vector<int> arm[2];
  std::vector<int> leg[2];
};

Layout make_layout(int n_joints) {
  Layout l;
  int extra = n_joints - 7;
  bool arms_turn = true;
  while (extra >= 2 && (l.n_arm < 4 || l.n_leg < 4)) {
    if ((arms_turn && l.n_arm < 4) || l.n_leg >= 4) {
      ++l.n_arm;
    } else {
      ++l.n_leg;
    }
    extra -= 2;
    arms_turn = !arms_turn;
  }
  l.n_spine += extra;

  l.joints = Points3::Zero(n_joints, 3);
  l.parents.assign(n_joints, -1);
  int next = 0;
  l.spine.push_back(next++);
  for (int i = 1; i <= l.n_spine; ++i) {
    const int j = next++;
    l.joints.row(j) << 0.0, 0.50 * i / l.n_spine, 0.0;
    l.parents[j] = j - 1;
    l.spine.push_back(j);
  }
  const int chest = l.spine[l.spine.size() - 2];
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? 1.0 : -1.0;
    for (int i = 0; i < l.n_arm; ++i) {
      const int j = next++;
      const double f = l.n_arm > 1 ? static_cast<double>(i) / (l.n_arm - 1) : 0.0;
      l.joints.row(j) << sx * (0.18 + 0.52 * f), 0.45, 0.0;
      l.parents[j] = i == 0 ? chest : j - 1;
      l.arm[side].push_back(j);
    }
  }
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? 1.0 : -1.0;
    for (int i = 0; i < l.n_leg; ++i) {
      const int j = next++;
      const double f = l.n_leg > 1 ? static_cast<double>(i) / (l.n_leg - 1) : 0.0;
      l.joints.row(j) << sx * 0.09, -0.05 - 0.80 * f, 0.0;
      l.parents[j] = i == 0 ? 0 : j - 1;
      l.leg[side].push_back(j);
    }
  }
  return l;
}

double interp(const std::vector<std::pair<double, double>>& pts, double x) {
  if (x <= pts.front().first) return pts.front().second;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (x <= pts[i].first) {
      const double f = (x - pts[i - 1].first) / (pts[i].first - pts[i - 1].first);
      return pts[i - 1].second + f * (pts[i].second - pts[i - 1].second);
    }
  }
  return pts.back().second;
}

// One generalized cylinder (or, for the head, an ellipsoid) of the toy body.
struct Tube {
  int part = 0;
  Eigen::Vector3d origin, axis, e1, e2;
  double length = 0.0;
  bool ellipsoid = false;
  Eigen::Vector3d radii = Eigen::Vector3d::Zero();  // ellipsoid only: (e1, axis, e2)
  std::vector<std::pair<double, double>> radius_a;  // u/length -> semi-axis along e1
  double depth_ratio = 1.0;
  std::vector<double> stations;                     // required ring positions
  std::vector<int> chain;                           // joints along the tube
  std::vector<double> chain_u;
  int chain_parent = -1;
  int ring_count = 0;
};

struct Ring {
  double u;
  double a, b;
  int first_vertex;
};

std::vector<int> split_evenly(int total, const std::vector<double>& weights) {
  double sum = 0.0;
  for (double w : weights) sum += w;
  std::vector<int> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  int used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = sum > 0.0 ? total * weights[i] / sum : 0.0;
    out[i] = static_cast<int>(std::floor(exact));
    used += out[i];
    rem.emplace_back(exact - out[i], i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto& x, auto& y) { return x.first > y.first; });
  for (int k = 0; k < total - used; ++k) ++out[rem[k % rem.size()].second];
  return out;
}

std::vector<double> ring_positions(const Tube& t) {
  std::vector<double> u;
  if (t.ellipsoid) {
    for (int k = 1; k <= t.ring_count; ++k) {
      const double phi = kPi * k / (t.ring_count + 1);
      u.push_back(t.radii.y() * (1.0 - std::cos(phi)));
    }
    return u;
  }
  const int gaps = static_cast<int>(t.stations.size()) - 1;
  std::vector<double> lengths;
  for (int i = 0; i < gaps; ++i) lengths.push_back(t.stations[i + 1] - t.stations[i]);
  const auto extra = split_evenly(t.ring_count - static_cast<int>(t.stations.size()), lengths);
  for (int i = 0; i < gaps; ++i) {
    u.push_back(t.stations[i]);
    for (int e = 1; e <= extra[i]; ++e) u.push_back(t.stations[i] + lengths[i] * e / (extra[i] + 1));
  }
  u.push_back(t.stations.back());
  return u;
}

// Skinning weights along a chain: each bone owns the span up to the next
// joint, with a linear blend of half-width delta around every joint.
std::vector<std::pair<int, double>> chain_weights(const Tube& t, double u) {
  const auto& c = t.chain;
  const auto& cu = t.chain_u;
  const int m = static_cast<int>(c.size());
  auto delta_at = [&](int q) {
    double d = 0.04;
    if (q > 0) d = std::min(d, 0.4 * (cu[q] - cu[q - 1]));
    if (q + 1 < m) d = std::min(d, 0.4 * (cu[q + 1] - cu[q]));
    return d;
  };
  auto prev_of = [&](int q) { return q > 0 ? c[q - 1] : t.chain_parent; };
  for (int q = 0; q < m; ++q) {
    const double d = delta_at(q);
    const int prev = prev_of(q);
    if (prev >= 0 && u >= cu[q] - d && u <= cu[q] + d) {
      const double w = (u - cu[q] + d) / (2.0 * d);
      return {{prev, 1.0 - w}, {c[q], w}};
    }
  }
  int owner = t.chain_parent >= 0 ? t.chain_parent : c[0];
  for (int q = 0; q < m; ++q)
    if (u >= cu[q]) owner = c[q];
  return {{owner, 1.0}};
}

}  // namespace

Points3 toy_skeleton(int n_joints) { return make_layout(n_joints).joints; }

BodyModel make_toy_model(std::uint64_t seed, int n_vertices, int n_joints, int n_shape) {
  if (n_vertices < 100) throw ConfigError("toy model needs n_vertices >= 100");
  if (n_joints < 8) throw ConfigError("toy model needs n_joints >= 8");
  if (n_shape < 1) throw ConfigError("toy model needs n_shape >= 1");
  const Layout lay = make_layout(n_joints);
  auto jpos = [&](int j) { return Eigen::Vector3d(lay.joints.row(j).transpose()); };

  std::vector<Tube> tubes;
  {
    Tube t;
    t.part = static_cast<int>(BodyPart::torso);
    t.origin = Eigen::Vector3d(0.0, -0.10, 0.0);
    t.axis = Eigen::Vector3d::UnitY();
    t.e1 = Eigen::Vector3d::UnitX();
    t.e2 = Eigen::Vector3d::UnitZ();
    t.length = 0.60;
    t.radius_a = {{0.0, 0.150}, {0.10 / 0.6, 0.155}, {0.25 / 0.6, 0.135}, {0.43 / 0.6, 0.170}, {0.55 / 0.6, 0.160},
                  {1.0, 0.075}};
    t.depth_ratio = 0.62;
    t.stations.push_back(0.0);
    for (int j : lay.spine) {
      t.chain.push_back(j);
      t.chain_u.push_back(jpos(j).y() + 0.10);
      t.stations.push_back(jpos(j).y() + 0.10);
    }
    tubes.push_back(t);
  }
  {
    Tube t;
    t.part = static_cast<int>(BodyPart::head);
    t.ellipsoid = true;
    t.origin = jpos(lay.spine.back());
    t.axis = Eigen::Vector3d::UnitY();
    t.e1 = Eigen::Vector3d::UnitX();
    t.e2 = Eigen::Vector3d::UnitZ();
    t.radii = Eigen::Vector3d(0.09, 0.13, 0.10);
    t.length = 2.0 * t.radii.y();
    t.chain = {lay.spine.back()};
    t.chain_u = {-1.0};
    tubes.push_back(t);
  }
  for (int side = 0; side < 2; ++side) {
    Tube t;
    t.part = static_cast<int>(side == 0 ? BodyPart::left_arm : BodyPart::right_arm);
    t.origin = jpos(lay.arm[side][0]);
    t.axis = Eigen::Vector3d(side == 0 ? 1.0 : -1.0, 0.0, 0.0);
    t.e1 = Eigen::Vector3d::UnitY();
    t.e2 = Eigen::Vector3d::UnitZ();
    t.length = 0.62;
    t.radius_a = {{0.0, 0.055}, {0.42, 0.045}, {0.84, 0.035}, {0.92, 0.042}, {1.0, 0.030}};
    for (int j : lay.arm[side]) {
      const double u = (jpos(j) - t.origin).norm();
      t.chain.push_back(j);
      t.chain_u.push_back(u);
      t.stations.push_back(u);
    }
    t.stations.push_back(t.length);
    t.chain_parent = lay.parents[lay.arm[side][0]];
    tubes.push_back(t);
  }
  for (int side = 0; side < 2; ++side) {
    Tube t;
    t.part = static_cast<int>(side == 0 ? BodyPart::left_leg : BodyPart::right_leg);
    t.origin = jpos(lay.leg[side][0]);
    t.axis = -Eigen::Vector3d::UnitY();
    t.e1 = Eigen::Vector3d::UnitX();
    t.e2 = Eigen::Vector3d::UnitZ();
    t.length = 0.87;
    t.radius_a = {{0.0, 0.085}, {0.46, 0.058}, {0.92, 0.045}, {1.0, 0.045}};
    for (int j : lay.leg[side]) {
      const double u = (jpos(j) - t.origin).norm();
      t.chain.push_back(j);
      t.chain_u.push_back(u);
      t.stations.push_back(u);
    }
    t.stations.push_back(t.length);
    t.chain_parent = 0;
    tubes.push_back(t);
  }

  // Ring budget: every tube has two cap vertices; leftover vertices are
  // inserted as face centroids on the head's top cap.
  std::vector<int> min_rings;
  for (const auto& t : tubes) min_rings.push_back(t.ellipsoid ? 2 : static_cast<int>(t.stations.size()));
  int min_total = 0;
  for (int r : min_rings) min_total += r;
  const int ring_vertices = n_vertices - 2 * static_cast<int>(tubes.size());
  const int target = static_cast<int>(std::lround(std::sqrt(ring_vertices / 6.0)));
  int per_ring = std::clamp(target, 3, 16);
  while (per_ring >= 3 && ring_vertices / per_ring < min_total) --per_ring;
  if (per_ring < 3) throw ConfigError("n_vertices too small for the requested joint count");
  const int total_rings = ring_vertices / per_ring;
  const int leftover = ring_vertices - total_rings * per_ring;
  {
    const int extra = total_rings - min_total;
    const int head = static_cast<int>(std::floor(0.12 * extra));
    const int arm = static_cast<int>(std::floor(0.13 * extra));
    const int leg = static_cast<int>(std::floor(0.16 * extra));
    const int torso = extra - head - 2 * arm - 2 * leg;
    const int add[6] = {torso, head, arm, arm, leg, leg};
    for (std::size_t i = 0; i < tubes.size(); ++i) tubes[i].ring_count = min_rings[i] + add[i];
  }

  BodyModel m;
  m.name = "toy-" + std::to_string(n_vertices) + "v-" + std::to_string(n_joints) + "j-s" + std::to_string(seed);
  m.n_vertices = n_vertices;
  m.n_joints = n_joints;
  m.n_shape = n_shape;
  m.parents = lay.parents;

  std::vector<Eigen::Vector3d> verts;
  std::vector<std::vector<std::pair<int, double>>> weights;
  std::vector<Eigen::Vector3d> girth;
  std::vector<std::array<int, 3>> faces;
  std::vector<int> labels;
  std::vector<std::vector<int>> joint_rings(n_joints);  // vertex ids the joint regresses from
  int head_top_cap_first_face = -1;

  for (std::size_t ti = 0; ti < tubes.size(); ++ti) {
    const Tube& t = tubes[ti];
    const auto us = ring_positions(t);
    std::vector<Ring> rings;
    for (double u : us) {
      Ring r{u, 0.0, 0.0, static_cast<int>(verts.size())};
      if (t.ellipsoid) {
        const double c = 1.0 - u / t.radii.y();
        const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
        r.a = t.radii.x() * s;
        r.b = t.radii.z() * s;
      } else {
        r.a = interp(t.radius_a, u / t.length);
        r.b = t.depth_ratio * r.a;
        if (t.part == static_cast<int>(BodyPart::torso) && u >= t.length - 1e-12) r.b = r.a;
      }
      // Girth axis (shape coefficient 0): ring-symmetric radial scaling,
      // which leaves every ring centre, hence every joint, in place.
      double g = 0.0;
      if (t.part == static_cast<int>(BodyPart::torso)) {
        const double y = t.origin.y() + u;
        g = interp({{0.40, 0.28}, {0.50, 0.10}}, y);
      } else if (t.part == static_cast<int>(BodyPart::left_leg) || t.part == static_cast<int>(BodyPart::right_leg)) {
        const double knee = t.chain_u.size() > 1 ? t.chain_u[1] : 0.4 * t.length;
        g = 0.18 * std::max(0.0, 1.0 - u / knee);
      } else if (t.part == static_cast<int>(BodyPart::left_arm) || t.part == static_cast<int>(BodyPart::right_arm)) {
        const double elbow = t.chain_u.size() > 1 ? t.chain_u[1] : 0.4 * t.length;
        g = 0.10 * std::max(0.0, 1.0 - u / elbow);
      }
      const auto w = t.ellipsoid ? std::vector<std::pair<int, double>>{{t.chain[0], 1.0}} : chain_weights(t, u);
      for (int k = 0; k < per_ring; ++k) {
        const double phi = 2.0 * kPi * k / per_ring;
        const Eigen::Vector3d radial = r.a * std::cos(phi) * t.e1 + r.b * std::sin(phi) * t.e2;
        verts.push_back(t.origin + u * t.axis + radial);
        weights.push_back(w);
        girth.push_back(g * radial);
      }
      rings.push_back(r);
    }
    if (!t.ellipsoid) {
      for (std::size_t q = 0; q < t.chain.size(); ++q) {
        for (const auto& r : rings) {
          if (std::abs(r.u - t.chain_u[q]) < 1e-12) {
            auto& ids = joint_rings[t.chain[q]];
            ids.clear();
            for (int k = 0; k < per_ring; ++k) ids.push_back(r.first_vertex + k);
          }
        }
      }
    }
    const int cap0 = static_cast<int>(verts.size());
    verts.push_back(t.origin);
    weights.push_back(t.ellipsoid ? std::vector<std::pair<int, double>>{{t.chain[0], 1.0}} : chain_weights(t, 0.0));
    girth.push_back(Eigen::Vector3d::Zero());
    const int cap1 = static_cast<int>(verts.size());
    verts.push_back(t.origin + t.length * t.axis);
    weights.push_back(t.ellipsoid ? std::vector<std::pair<int, double>>{{t.chain[0], 1.0}}
                                  : chain_weights(t, t.length));
    girth.push_back(Eigen::Vector3d::Zero());

    for (std::size_t ri = 0; ri + 1 < rings.size(); ++ri) {
      const int a0 = rings[ri].first_vertex, b0 = rings[ri + 1].first_vertex;
      for (int k = 0; k < per_ring; ++k) {
        const int k1 = (k + 1) % per_ring;
        faces.push_back({a0 + k, a0 + k1, b0 + k1});
        faces.push_back({a0 + k, b0 + k1, b0 + k});
        labels.push_back(t.part);
        labels.push_back(t.part);
      }
    }
    const int first = rings.front().first_vertex, last = rings.back().first_vertex;
    for (int k = 0; k < per_ring; ++k) {
      faces.push_back({cap0, first + (k + 1) % per_ring, first + k});
      labels.push_back(t.part);
    }
    if (t.ellipsoid) head_top_cap_first_face = static_cast<int>(faces.size());
    for (int k = 0; k < per_ring; ++k) {
      faces.push_back({cap1, last + k, last + (k + 1) % per_ring});
      labels.push_back(t.part);
    }
  }

  for (int e = 0; e < leftover; ++e) {
    const int f = head_top_cap_first_face + e;
    const auto tri = faces[f];
    const int c = static_cast<int>(verts.size());
    verts.push_back((verts[tri[0]] + verts[tri[1]] + verts[tri[2]]) / 3.0);
    std::vector<std::pair<int, double>> w;
    for (int v : tri)
      for (auto [j, wj] : weights[v]) w.emplace_back(j, wj / 3.0);
    weights.push_back(w);
    girth.push_back((girth[tri[0]] + girth[tri[1]] + girth[tri[2]]) / 3.0);
    faces[f] = {tri[0], tri[1], c};
    faces.push_back({tri[1], tri[2], c});
    faces.push_back({tri[2], tri[0], c});
    labels.push_back(static_cast<int>(BodyPart::head));
    labels.push_back(static_cast<int>(BodyPart::head));
  }

  const int n = static_cast<int>(verts.size());
  if (n != n_vertices) throw ConfigError("internal: toy vertex budget mismatch");

  m.template_vertices.resize(n, 3);
  for (int i = 0; i < n; ++i) m.template_vertices.row(i) = verts[i].transpose();
  m.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f) m.faces.row(f) << faces[f][0], faces[f][1], faces[f][2];
  m.face_part = labels;

  m.skin_weights = RowMatrix::Zero(n, n_joints);
  for (int i = 0; i < n; ++i)
    for (auto [j, w] : weights[i]) m.skin_weights(i, j) += w;

  m.joint_regressor = RowMatrix::Zero(n_joints, n);
  for (int j = 0; j < n_joints; ++j) {
    const auto& ids = joint_rings[j];
    if (ids.empty()) throw ConfigError("internal: joint without regressor ring");
    for (int v : ids) m.joint_regressor(j, v) = 1.0 / static_cast<double>(ids.size());
  }

  // Shape space: column 0 is the girth axis; the rest are smooth, left/right
  // symmetric random displacement fields, orthogonalised against column 0 and
  // each other and scaled to a fixed per-vertex RMS.
  m.shape_dirs = RowMatrix::Zero(3 * n, n_shape);
  for (int i = 0; i < n; ++i) m.shape_dirs.block(3 * i, 0, 3, 1) = girth[i];
  Rng rng(seed, 0x5eed);
  std::vector<Vector> basis;
  basis.push_back(m.shape_dirs.col(0).normalized());
  const double field_scale = 0.0005 * std::sqrt(static_cast<double>(n));
  for (int c = 1; c < n_shape; ++c) {
    double wx[6], wy[8], wz[7];
    for (double& w : wx) w = rng.normal();
    for (double& w : wy) w = rng.normal();
    for (double& w : wz) w = rng.normal();
    Vector field(3 * n);
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d q = verts[i] / 0.8;
      const double x = q.x(), y = q.y(), z = q.z();
      const double sy = std::sin(kPi * y), cy = std::cos(kPi * y);
      field(3 * i + 0) = wx[0] * x + wx[1] * x * y + wx[2] * x * y * y + wx[3] * x * z + wx[4] * x * x * x + wx[5] * x * sy;
      field(3 * i + 1) = wy[0] * y + wy[1] * y * y + wy[2] * x * x + wy[3] * z + wy[4] * y * z + wy[5] * sy +
                         wy[6] * cy + wy[7] * x * x * y;
      field(3 * i + 2) = wz[0] * z + wz[1] * y * z + wz[2] * x * x + wz[3] * y + wz[4] * y * y + wz[5] * sy +
                         wz[6] * z * x * x;
    }
    for (const auto& b : basis) field -= field.dot(b) * b;
    field.normalize();
    basis.push_back(field);
    m.shape_dirs.col(c) = field_scale * field;
  }

  m.validate();
  return m;
}

std::vector<int> joint_part_table(const BodyModel& model) {
  std::vector<std::array<int, kNumParts + 1>> votes(model.n_joints);
  for (auto& v : votes) v.fill(0);
  std::vector<int> dominant(model.n_vertices);
  for (int i = 0; i < model.n_vertices; ++i) {
    Eigen::Index k;
    model.skin_weights.row(i).maxCoeff(&k);
    dominant[i] = static_cast<int>(k);
  }
  for (int f = 0; f < model.n_faces(); ++f)
    for (int c = 0; c < 3; ++c) ++votes[dominant[model.faces(f, c)]][model.face_part[f]];
  std::vector<int> table(model.n_joints, static_cast<int>(BodyPart::torso));
  for (int k = 0; k < model.n_joints; ++k) {
    int best = 0;
    for (int p = 1; p <= kNumParts; ++p)
      if (votes[k][p] > (best > 0 ? votes[k][best] : 0)) best = p;
    if (best > 0) {
      table[k] = best;
    } else if (model.parents[k] >= 0) {
      table[k] = table[model.parents[k]];
    }
  }
  return table;
}

std::vector<int> vertex_parts(const BodyModel& model) {
  const auto table = joint_part_table(model);
  std::vector<int> out(model.n_vertices);
  for (int i = 0; i < model.n_vertices; ++i) {
    Eigen::Index k;
    model.skin_weights.row(i).maxCoeff(&k);
    out[i] = table[k];
  }
  return out;
}

}  // namespace omrfit
