#include <doctest.h>

#include <cmath>
#include <limits>

#include "omrfit/diffengine.hpp"
#include "omrfit/errors.hpp"
#include "omrfit/losses.hpp"
#include "support.hpp"

using namespace omrfit;

TEST_CASE("value and gradient of simple objectives") {
  Objective sq = [](const Vector& x, Vector* g) {
    if (g) *g = 2.0 * x;
    return x.squaredNorm();
  };
  const ValueGrad a = value_and_grad(sq, Vector::Constant(1, 3.0));
  CHECK(a.value == 9.0);
  CHECK(a.grad(0) == 6.0);

  Objective constant = [](const Vector& x, Vector* g) {
    if (g) g->setZero(x.size());
    return 4.0;
  };
  const ValueGrad c = value_and_grad(constant, Vector::Ones(5));
  CHECK(c.value == 4.0);
  CHECK(c.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("non-finite values name the primitive") {
  Objective bad = [](const Vector& x, Vector* g) {
    if (g) g->setZero(x.size());
    const double v = std::log(x(0));
    check_finite(v, "log_barrier");
    return v;
  };
  try {
    value_and_grad(bad, Vector::Constant(1, -1.0));
    FAIL("expected NumericsError");
  } catch (const NumericsError& e) {
    CHECK(e.primitive() == "log_barrier");
  }
  Vector v = Vector::Zero(3);
  v(1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(check_finite(v, "vec"), NumericsError);
}

TEST_CASE("adam step") {
  AdamState s = AdamState::create(1, 0.1);
  Vector x = Vector::Constant(1, 1.0);
  adam_step(s, x, Vector::Constant(1, 4.0));
  CHECK(x(0) == doctest::Approx(0.9).epsilon(1e-8));
  CHECK(s.step_count == 1);

  AdamState z = AdamState::create(4, 0.1);
  Vector y = Vector::LinSpaced(4, -1.0, 2.0);
  const Vector y0 = y;
  for (int i = 0; i < 10; ++i) adam_step(z, y, Vector::Zero(4));
  CHECK(y == y0);

  AdamState bad = AdamState::create(3, 0.1);
  Vector w = Vector::Zero(3);
  CHECK_THROWS_AS(adam_step(bad, w, Vector::Zero(2)), DimensionError);
}

TEST_CASE("adam against a reference implementation") {
  Rng rng(1);
  const int n = 6;
  Vector x = test::random_vector(rng, n, 1.0);
  Vector ref = x, m = Vector::Zero(n), v = Vector::Zero(n);
  AdamState s = AdamState::create(n, 0.01);
  for (int t = 1; t <= 50; ++t) {
    const Vector g = 2.0 * x + Vector::Constant(n, std::sin(t));
    adam_step(s, x, g);
    const Vector gr = 2.0 * ref + Vector::Constant(n, std::sin(t));
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr.cwiseProduct(gr);
    const Vector mh = m / (1.0 - std::pow(0.9, t));
    const Vector vh = v / (1.0 - std::pow(0.999, t));
    ref -= 0.01 * mh.cwiseQuotient((vh.cwiseSqrt().array() + 1e-8).matrix());
  }
  CHECK((x - ref).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("adam runs are bit-identical") {
  auto run = [] {
    Rng rng(42);
    Vector x = test::random_vector(rng, 8, 1.0);
    AdamState s = AdamState::create(8, 0.05);
    for (int i = 0; i < 100; ++i) adam_step(s, x, x.array().cube().matrix());
    return x;
  };
  CHECK(run() == run());
}

TEST_CASE("finite-difference checker") {
  Rng rng(3);
  RowMatrix a = RowMatrix::NullaryExpr(6, 6, [&] { return rng.normal(); });
  a = (a * a.transpose()).eval();
  Objective quad = [&](const Vector& x, Vector* g) {
    if (g) *g = 2.0 * a * x;
    return x.dot(a * x);
  };
  const Vector x = test::random_vector(rng, 6, 1.0);
  const FdReport r = fd_check(quad, x, 1e-5, 1e-8);
  CHECK(r.max_rel_error <= 1e-8);
  CHECK(r.passed);
  CHECK(r.coordinates.size() == 6);

  // A wrong gradient is caught.
  Objective wrong = [&](const Vector& x, Vector* g) {
    if (g) *g = 2.1 * a * x;
    return x.dot(a * x);
  };
  CHECK_FALSE(fd_check(wrong, x, 1e-5, 1e-3).passed);

  const std::vector<int> some = {1, 4};
  CHECK(fd_check(quad, x, 1e-5, 1e-8, some).coordinates == some);
  CHECK_THROWS_AS(fd_check(quad, x, 0.0, 1e-3), ConfigError);
}

TEST_CASE("Geman-McClure composite passes the checker") {
  Rng rng(8);
  const Points2 gt = Points2::NullaryExpr(10, 2, [&] { return rng.normal(); });
  const std::vector<std::uint8_t> vis = {1, 1, 0, 1, 1, 1, 0, 1, 1, 1};
  for (GmMode mode : {GmMode::keypoint, GmMode::coord}) {
    Objective f = [&](const Vector& x, Vector* g) {
      const Points2 p = Eigen::Map<const Points2>(x.data(), 10, 2);
      Points2 gp;
      const double v = reprojection_loss(p, gt, vis, 0.5, mode, g ? &gp : nullptr).value;
      if (g) *g = Eigen::Map<const Vector>(gp.data(), 20);
      return v;
    };
    const Vector x = Eigen::Map<const Vector>(gt.data(), 20) + test::random_vector(rng, 20, 0.5);
    CHECK(fd_check(f, x, 1e-5, 1e-4).max_rel_error <= 1e-4);
  }
}

TEST_CASE("gradients are linear in the objective") {
  Rng rng(5);
  Objective f = [](const Vector& x, Vector* g) {
    if (g) *g = x.array().cos().matrix();
    return x.array().sin().sum();
  };
  Objective h = [](const Vector& x, Vector* g) {
    if (g) *g = 3.0 * x.array().square().matrix();
    return x.array().cube().sum();
  };
  const double a = 0.7, b = -2.5;
  Objective mix = [&](const Vector& x, Vector* g) {
    Vector gf, gh;
    const double v = a * f(x, g ? &gf : nullptr) + b * h(x, g ? &gh : nullptr);
    if (g) *g = a * gf + b * gh;
    return v;
  };
  const Vector x = test::random_vector(rng, 7, 1.0);
  const Vector lhs = value_and_grad(mix, x).grad;
  const Vector rhs = a * value_and_grad(f, x).grad + b * value_and_grad(h, x).grad;
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(value_and_grad(mix, x).grad == lhs);
}

TEST_CASE("parameter vector segments") {
  ParamVector p(Vector::LinSpaced(61, 0.0, 60.0));
  p.add_segment("beta", 10);
  p.add_segment("theta", 48);
  CHECK_FALSE(p.valid());
  p.add_segment("scale", 1);
  p.add_segment("trans", 2);
  CHECK(p.valid());
  CHECK(p.segment("theta").offset == 10);
  CHECK(p.view("scale")(0) == 58.0);
  p.view("trans")(1) = -1.0;
  CHECK(p.values()(60) == -1.0);
  CHECK_THROWS_AS(p.add_segment("beta", 1), ConfigError);
  CHECK_THROWS_AS(p.segment("missing"), ConfigError);
  p.add_segment("extra", 2);
  CHECK(p.size() == 63);
  CHECK(p.view("extra").cwiseAbs().maxCoeff() == 0.0);
  CHECK(p.valid());

  ParamVector grown;
  grown.add_segment("alpha", 5);
  CHECK(grown.size() == 5);
  CHECK(grown.valid());
  p.values()(3) = std::nan("");
  CHECK_FALSE(p.valid());
}
