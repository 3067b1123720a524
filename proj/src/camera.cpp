#include "omrfit/camera.hpp"

#include <string>

#include "omrfit/errors.hpp"

namespace omrfit {

namespace {
void check_camera(const CameraParams& cam) {
  if (!(cam.scale > 0.0)) throw CameraError("camera scale must be > 0, got " + std::to_string(cam.scale));
}
}  // namespace

Points2 project(const Points3& points, const CameraParams& cam) {
  check_camera(cam);
  Points2 out = cam.scale * points.leftCols<2>();
  out.rowwise() += cam.trans.transpose();
  return out;
}

CameraGrad project_backward(const Points3& points, const CameraParams& cam, const Points2& grad_out) {
  check_camera(cam);
  require_dims(points.rows() == grad_out.rows(), "projection gradient size mismatch");
  CameraGrad g;
  g.points = Points3::Zero(points.rows(), 3);
  g.points.leftCols<2>() = cam.scale * grad_out;
  g.scale = (points.leftCols<2>().array() * grad_out.array()).sum();
  g.trans = grad_out.colwise().sum().transpose();
  return g;
}

}  // namespace omrfit
