#pragma once

#include <Eigen/Core>

#include "omrfit/types.hpp"

namespace omrfit {

// Weak perspective: x = s * (X.x, X.y) + t in the normalized image frame
// ([-1, 1]^2, y up).
struct CameraParams {
  double scale = 1.0;
  Eigen::Vector2d trans = Eigen::Vector2d::Zero();
};

Points2 project(const Points3& points, const CameraParams& cam);

struct CameraGrad {
  Points3 points;
  double scale = 0.0;
  Eigen::Vector2d trans = Eigen::Vector2d::Zero();
};

// Pullback of an upstream gradient on the projected points.
CameraGrad project_backward(const Points3& points, const CameraParams& cam, const Points2& grad_out);

}  // namespace omrfit
