#include <doctest.h>

#include "omrfit/camera.hpp"
#include "omrfit/diffengine.hpp"
#include "omrfit/errors.hpp"
#include "support.hpp"

using namespace omrfit;

TEST_CASE("weak perspective projection") {
  Points3 p(2, 3);
  p << 0.0, 0.0, 7.0, 2.0, 1.0, 5.0;
  const Points2 a = project(p, {1.0, {0.0, 0.0}});
  CHECK(a(0, 0) == 0.0);
  CHECK(a(0, 1) == 0.0);
  const Points2 b = project(p, {2.0, {0.1, -0.2}});
  CHECK(b(1, 0) == doctest::Approx(4.1).epsilon(1e-15));
  CHECK(b(1, 1) == doctest::Approx(1.8).epsilon(1e-15));
}

TEST_CASE("projection is linear in scale and drops depth") {
  Rng rng(4);
  Points3 p = Points3::NullaryExpr(30, 3, [&] { return rng.normal(); });
  const Eigen::Vector2d t(0.3, -0.1);
  const Points2 one = project(p, {0.7, t});
  const Points2 two = project(p, {1.4, t});
  CHECK(((two.rowwise() - t.transpose()) - 2.0 * (one.rowwise() - t.transpose())).cwiseAbs().maxCoeff() < 1e-14);
  p.col(2).setRandom();
  CHECK(project(p, {0.7, t}) == one);
}

TEST_CASE("non-positive scale is rejected") {
  const Points3 p = Points3::Zero(3, 3);
  CHECK_THROWS_AS(project(p, {0.0, {0.0, 0.0}}), CameraError);
  CHECK_THROWS_AS(project(p, {-1.0, {0.0, 0.0}}), CameraError);
}

TEST_CASE("projection Jacobian matches finite differences") {
  Rng rng(9);
  const int m = 12;
  const Points2 w = Points2::NullaryExpr(m, 2, [&] { return rng.normal(); });
  // x = [points (3m) | s | tx ty]
  Objective f = [&](const Vector& x, Vector* grad) {
    Points3 p(m, 3);
    for (int i = 0; i < m; ++i) p.row(i) = x.segment<3>(3 * i).transpose();
    const CameraParams cam{x(3 * m), x.tail<2>()};
    if (grad) {
      const CameraGrad g = project_backward(p, cam, w);
      grad->resize(x.size());
      for (int i = 0; i < m; ++i) grad->segment<3>(3 * i) = g.points.row(i).transpose();
      (*grad)(3 * m) = g.scale;
      grad->tail<2>() = g.trans;
    }
    return project(p, cam).cwiseProduct(w).sum();
  };
  for (int trial = 0; trial < 10; ++trial) {
    Vector x = test::random_vector(rng, 3 * m + 3, 1.0);
    x(3 * m) = 0.5 + rng.uniform();
    const FdReport r = fd_check(f, x, 1e-5, 1e-6);
    CHECK(r.max_rel_error <= 1e-6);
  }
}
