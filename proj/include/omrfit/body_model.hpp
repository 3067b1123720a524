#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "omrfit/types.hpp"

namespace omrfit {

// Part ids used for face labels and the six-part masks.
enum class BodyPart : int { head = 1, torso = 2, left_arm = 3, right_arm = 4, left_leg = 5, right_leg = 6 };
inline constexpr int kNumParts = 6;

// Fixed model constants: template, blendshapes, skinning, joint regressor
// and kinematic tree. Immutable once built.
struct BodyModel {
  std::string name;
  int n_vertices = 0;
  int n_joints = 0;
  int n_shape = 0;
  Points3 template_vertices;  // N x 3, meters, T-pose
  Faces faces;                // F x 3
  RowMatrix shape_dirs;       // (3N) x n_shape, row 3*i + c
  RowMatrix joint_regressor;  // K x N
  RowMatrix skin_weights;     // N x K
  std::vector<int> parents;   // parents[0] == -1
  std::vector<int> face_part; // F labels in 1..6

  int n_faces() const { return static_cast<int>(faces.rows()); }
  int theta_size() const { return 3 * n_joints; }

  // Throws DataError when an invariant of the model is violated.
  void validate() const;
};

struct ShapeParams {
  Vector beta;
};

struct PoseParams {
  Vector theta;  // 3K axis-angle, block 0 is the global orientation
};

// Θ = {β, θ, s, t}. Flat layout: [beta | theta | scale | trans_x trans_y].
struct MeshParams {
  Vector beta;
  Vector theta;
  double scale = 1.0;
  Eigen::Vector2d trans = Eigen::Vector2d::Zero();

  static MeshParams zeros(const BodyModel& model);
  static int flat_size(const BodyModel& model) { return model.n_shape + model.theta_size() + 3; }
  Vector flatten() const;
  static MeshParams unflatten(const BodyModel& model, const Eigen::Ref<const Vector>& flat);
};

Eigen::Matrix3d rodrigues(const Eigen::Vector3d& axis_angle);

// dR/dω_c for c = 0..2.
std::array<Eigen::Matrix3d, 3> rodrigues_derivatives(const Eigen::Vector3d& axis_angle);

Points3 shaped_vertices(const BodyModel& model, const Eigen::Ref<const Vector>& beta);
inline Points3 tpose_vertices(const BodyModel& model, const Eigen::Ref<const Vector>& beta) {
  return shaped_vertices(model, beta);
}

Points3 regress_joints(const BodyModel& model, const Points3& vertices);

struct KinematicState {
  std::vector<Eigen::Matrix3d> local_rot;
  std::vector<Eigen::Matrix3d> world_rot;
  std::vector<Eigen::Vector3d> world_pos;
  // world * rest^-1, the transform applied to rest-pose geometry.
  std::vector<Eigen::Matrix4d> skinning;
};

KinematicState forward_kinematics(const BodyModel& model, const Eigen::Ref<const Vector>& theta,
                                  const Points3& rest_joints);

Points3 skin_vertices(const BodyModel& model, const Points3& shaped,
                      const std::vector<Eigen::Matrix4d>& transforms);

// Everything computed by a forward pass, kept for the backward pass.
struct BodyEval {
  Vector theta;
  Points3 shaped;
  Points3 rest_joints;
  KinematicState kin;
  Points3 vertices;
  Points3 joints;
};

BodyEval body_forward(const BodyModel& model, const Eigen::Ref<const Vector>& beta,
                      const Eigen::Ref<const Vector>& theta);

struct BodyOutput {
  Points3 vertices;
  Points3 joints;
};

BodyOutput forward(const BodyModel& model, const MeshParams& params);

// Reverse pass of body_forward. Either upstream gradient may be empty
// (zero rows), meaning no dependence on that output. Gradients are
// accumulated into grad_beta / grad_theta.
void body_backward(const BodyModel& model, const BodyEval& eval, const Points3& grad_vertices,
                   const Points3& grad_joints, Eigen::Ref<Vector> grad_beta, Eigen::Ref<Vector> grad_theta);

// Procedural humanoid standing in for a licensed body asset.
BodyModel make_toy_model(std::uint64_t seed = 0, int n_vertices = 602, int n_joints = 16, int n_shape = 10);

// Rest joint layout the toy model is built around (before shape offsets).
Points3 toy_skeleton(int n_joints);

// Part owning each joint: plurality face label over the vertices whose
// dominant skinning weight is that joint; joints without vertices inherit
// their parent's part.
std::vector<int> joint_part_table(const BodyModel& model);

// Part of each vertex via its dominant skinning joint.
std::vector<int> vertex_parts(const BodyModel& model);

}  // namespace omrfit
