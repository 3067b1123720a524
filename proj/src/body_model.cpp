#include "omrfit/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "omrfit/errors.hpp"
#include "omrfit/rng.hpp"

namespace omrfit {

namespace {

Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d k;
  k << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return k;
}

// Coefficients of R = I + a K + b K^2 and c = a'/|w|, d = b'/|w|.
struct RodriguesCoeffs {
  double a, b, c, d;
};

RodriguesCoeffs rodrigues_coeffs(double angle2) {
  // The series branch covers |w| < 1e-3; its truncation error is far below
  // double precision there and it reduces to the second-order Taylor form
  // of R for |w| < 1e-8.
  if (angle2 < 1e-6) {
    const double t2 = angle2, t4 = angle2 * angle2;
    return {1.0 - t2 / 6.0 + t4 / 120.0, 0.5 - t2 / 24.0 + t4 / 720.0, -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0};
  }
  const double t = std::sqrt(angle2);
  const double s = std::sin(t), co = std::cos(t);
  return {s / t, (1.0 - co) / angle2, (t * co - s) / (angle2 * t), (t * s - 2.0 * (1.0 - co)) / (angle2 * angle2)};
}

}  // namespace

void BodyModel::validate() const {
  auto fail = [&](const std::string& msg) { throw DataError("model '" + name + "': " + msg); };
  if (n_vertices <= 0 || n_joints <= 0 || n_shape < 0) fail("non-positive sizes");
  if (template_vertices.rows() != n_vertices) fail("template size mismatch");
  if (shape_dirs.rows() != 3 * n_vertices || shape_dirs.cols() != n_shape) fail("shape_dirs size mismatch");
  if (joint_regressor.rows() != n_joints || joint_regressor.cols() != n_vertices) fail("joint_regressor size mismatch");
  if (skin_weights.rows() != n_vertices || skin_weights.cols() != n_joints) fail("skin_weights size mismatch");
  if (static_cast<int>(parents.size()) != n_joints) fail("parents size mismatch");
  if (static_cast<int>(face_part.size()) != faces.rows()) fail("face_part size mismatch");
  if (!template_vertices.allFinite() || !shape_dirs.allFinite()) fail("non-finite geometry");
  if ((joint_regressor.array() < 0.0).any() || (skin_weights.array() < 0.0).any()) fail("negative weights");
  for (int k = 0; k < n_joints; ++k)
    if (std::abs(joint_regressor.row(k).sum() - 1.0) > 1e-6) fail("joint_regressor row " + std::to_string(k) + " not stochastic");
  for (int i = 0; i < n_vertices; ++i)
    if (std::abs(skin_weights.row(i).sum() - 1.0) > 1e-6) fail("skin_weights row " + std::to_string(i) + " not stochastic");
  if (parents[0] != -1) fail("joint 0 must be the root");
  for (int k = 1; k < n_joints; ++k)
    if (parents[k] < 0 || parents[k] >= k) fail("parents[" + std::to_string(k) + "] must precede it");
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int c = 0; c < 3; ++c)
      if (faces(f, c) < 0 || faces(f, c) >= n_vertices) fail("face index out of range");
    if (face_part[f] < 1 || face_part[f] > kNumParts) fail("face_part label out of range");
  }
}

MeshParams MeshParams::zeros(const BodyModel& model) {
  MeshParams p;
  p.beta = Vector::Zero(model.n_shape);
  p.theta = Vector::Zero(model.theta_size());
  return p;
}

Vector MeshParams::flatten() const {
  Vector flat(beta.size() + theta.size() + 3);
  flat << beta, theta, scale, trans;
  return flat;
}

MeshParams MeshParams::unflatten(const BodyModel& model, const Eigen::Ref<const Vector>& flat) {
  require_dims(flat.size() == flat_size(model), "mesh parameter vector has wrong length");
  MeshParams p;
  p.beta = flat.head(model.n_shape);
  p.theta = flat.segment(model.n_shape, model.theta_size());
  p.scale = flat(model.n_shape + model.theta_size());
  p.trans = flat.tail<2>();
  return p;
}

Eigen::Matrix3d rodrigues(const Eigen::Vector3d& w) {
  const auto co = rodrigues_coeffs(w.squaredNorm());
  const Eigen::Matrix3d k = skew(w);
  return Eigen::Matrix3d::Identity() + co.a * k + co.b * k * k;
}

std::array<Eigen::Matrix3d, 3> rodrigues_derivatives(const Eigen::Vector3d& w) {
  const auto co = rodrigues_coeffs(w.squaredNorm());
  const Eigen::Matrix3d k = skew(w);
  const Eigen::Matrix3d k2 = k * k;
  std::array<Eigen::Matrix3d, 3> out;
  for (int c = 0; c < 3; ++c) {
    const Eigen::Matrix3d e = skew(Eigen::Vector3d::Unit(c));
    out[c] = co.a * e + co.b * (e * k + k * e) + (co.c * w(c)) * k + (co.d * w(c)) * k2;
  }
  return out;
}

Points3 shaped_vertices(const BodyModel& model, const Eigen::Ref<const Vector>& beta) {
  require_dims(beta.size() == model.n_shape, "beta length " + std::to_string(beta.size()) + " != n_shape " +
                                                 std::to_string(model.n_shape));
  Points3 out = model.template_vertices;
  if (model.n_shape > 0) {
    const Vector offsets = model.shape_dirs * beta;
    out += Eigen::Map<const Points3>(offsets.data(), model.n_vertices, 3);
  }
  return out;
}

Points3 regress_joints(const BodyModel& model, const Points3& vertices) {
  require_dims(vertices.rows() == model.n_vertices, "vertex count does not match model");
  return model.joint_regressor * vertices;
}

KinematicState forward_kinematics(const BodyModel& model, const Eigen::Ref<const Vector>& theta,
                                  const Points3& rest_joints) {
  require_dims(theta.size() == model.theta_size(), "theta length must be 3K");
  require_dims(rest_joints.rows() == model.n_joints, "rest joint count mismatch");
  const int k_count = model.n_joints;
  KinematicState s;
  s.local_rot.resize(k_count);
  s.world_rot.resize(k_count);
  s.world_pos.resize(k_count);
  s.skinning.resize(k_count);
  for (int k = 0; k < k_count; ++k) {
    s.local_rot[k] = rodrigues(theta.segment<3>(3 * k));
    const Eigen::Vector3d jk = rest_joints.row(k).transpose();
    const int p = model.parents[k];
    if (p < 0) {
      s.world_rot[k] = s.local_rot[k];
      s.world_pos[k] = jk;
    } else {
      const Eigen::Vector3d jp = rest_joints.row(p).transpose();
      s.world_rot[k] = s.world_rot[p] * s.local_rot[k];
      s.world_pos[k] = s.world_pos[p] + s.world_rot[p] * (jk - jp);
    }
    Eigen::Matrix4d a = Eigen::Matrix4d::Identity();
    a.topLeftCorner<3, 3>() = s.world_rot[k];
    a.topRightCorner<3, 1>() = s.world_pos[k] - s.world_rot[k] * jk;
    s.skinning[k] = a;
  }
  return s;
}

Points3 skin_vertices(const BodyModel& model, const Points3& shaped, const std::vector<Eigen::Matrix4d>& transforms) {
  require_dims(shaped.rows() == model.n_vertices, "vertex count does not match model");
  require_dims(static_cast<int>(transforms.size()) == model.n_joints, "transform count does not match model");
  Points3 out(model.n_vertices, 3);
  for (int i = 0; i < model.n_vertices; ++i) {
    Eigen::Matrix<double, 3, 4> blended = Eigen::Matrix<double, 3, 4>::Zero();
    for (int k = 0; k < model.n_joints; ++k) {
      const double w = model.skin_weights(i, k);
      if (w != 0.0) blended += w * transforms[k].topRows<3>();
    }
    out.row(i) = (blended.leftCols<3>() * shaped.row(i).transpose() + blended.col(3)).transpose();
  }
  return out;
}

BodyEval body_forward(const BodyModel& model, const Eigen::Ref<const Vector>& beta, const Eigen::Ref<const Vector>& theta) {
  BodyEval e;
  e.theta = theta;
  e.shaped = shaped_vertices(model, beta);
  e.rest_joints = regress_joints(model, e.shaped);
  e.kin = forward_kinematics(model, theta, e.rest_joints);
  e.vertices = skin_vertices(model, e.shaped, e.kin.skinning);
  e.joints = regress_joints(model, e.vertices);
  return e;
}

BodyOutput forward(const BodyModel& model, const MeshParams& params) {
  BodyEval e = body_forward(model, params.beta, params.theta);
  return {std::move(e.vertices), std::move(e.joints)};
}

void body_backward(const BodyModel& model, const BodyEval& eval, const Points3& grad_vertices,
                   const Points3& grad_joints, Eigen::Ref<Vector> grad_beta, Eigen::Ref<Vector> grad_theta) {
  const int n = model.n_vertices;
  const int k_count = model.n_joints;
  require_dims(grad_beta.size() == model.n_shape && grad_theta.size() == model.theta_size(),
               "gradient buffers do not match model");

  Points3 g = Points3::Zero(n, 3);
  if (grad_vertices.rows() > 0) {
    require_dims(grad_vertices.rows() == n, "vertex gradient size mismatch");
    g += grad_vertices;
  }
  if (grad_joints.rows() > 0) {
    require_dims(grad_joints.rows() == k_count, "joint gradient size mismatch");
    g += model.joint_regressor.transpose() * grad_joints;
  }

  const auto& kin = eval.kin;
  std::vector<Eigen::Matrix3d> g_rot(k_count, Eigen::Matrix3d::Zero());
  std::vector<Eigen::Vector3d> g_pos(k_count, Eigen::Vector3d::Zero());
  Points3 g_rest = Points3::Zero(k_count, 3);
  Points3 g_shaped(n, 3);

  // Skinning: v' = sum_k w_ik (R_k v + a_k).
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d gi = g.row(i).transpose();
    const Eigen::Vector3d vi = eval.shaped.row(i).transpose();
    Eigen::Matrix3d blended = Eigen::Matrix3d::Zero();
    for (int k = 0; k < k_count; ++k) {
      const double w = model.skin_weights(i, k);
      if (w == 0.0) continue;
      blended += w * kin.world_rot[k];
      g_rot[k] += (w * gi) * vi.transpose();
      g_pos[k] += w * gi;  // as grad of a_k for now
    }
    g_shaped.row(i) = (blended.transpose() * gi).transpose();
  }

  // a_k = p_k - R_k j_k.
  for (int k = 0; k < k_count; ++k) {
    const Eigen::Vector3d jk = eval.rest_joints.row(k).transpose();
    const Eigen::Vector3d ga = g_pos[k];
    g_rot[k] -= ga * jk.transpose();
    g_rest.row(k) -= (kin.world_rot[k].transpose() * ga).transpose();
  }

  // Tree, children before parents.
  std::vector<Eigen::Matrix3d> g_local(k_count);
  for (int k = k_count - 1; k >= 0; --k) {
    const int p = model.parents[k];
    if (p < 0) {
      g_local[k] = g_rot[k];
      g_rest.row(k) += g_pos[k].transpose();
      continue;
    }
    const Eigen::Vector3d offset = (eval.rest_joints.row(k) - eval.rest_joints.row(p)).transpose();
    const Eigen::Matrix3d& rp = kin.world_rot[p];
    g_pos[p] += g_pos[k];
    g_rot[p] += g_pos[k] * offset.transpose();
    const Eigen::Vector3d back = rp.transpose() * g_pos[k];
    g_rest.row(k) += back.transpose();
    g_rest.row(p) -= back.transpose();
    g_rot[p] += g_rot[k] * kin.local_rot[k].transpose();
    g_local[k] = rp.transpose() * g_rot[k];
  }

  for (int k = 0; k < k_count; ++k) {
    const auto d = rodrigues_derivatives(eval.theta.segment<3>(3 * k));
    for (int c = 0; c < 3; ++c) grad_theta(3 * k + c) += (g_local[k].array() * d[c].array()).sum();
  }

  // Rest joints are regressed from the shaped vertices.
  g_shaped += model.joint_regressor.transpose() * g_rest;
  if (model.n_shape > 0) {
    const Eigen::Map<const Vector> flat(g_shaped.data(), 3 * n);
    grad_beta += model.shape_dirs.transpose() * flat;
  }
}

}  // namespace omrfit
