#include <doctest.h>

#include <cmath>

#include "omrfit/data_synth.hpp"
#include "omrfit/diffengine.hpp"
#include "omrfit/errors.hpp"
#include "omrfit/losses.hpp"
#include "support.hpp"

using namespace omrfit;

namespace {

const BodyModel& toy() {
  static const BodyModel m = make_toy_model();
  return m;
}

const PosePrior& prior() {
  static const PosePrior p = default_pose_prior(toy());
  return p;
}

Observation sample_obs(std::uint64_t seed, double noise = 0.0) {
  Rng rng(seed, 11);
  const MeshParams gt = sample_params(toy(), Distribution::normal, rng);
  return make_observation(toy(), gt, "q" + std::to_string(seed), noise, rng, 32);
}

PartMaskStack square_mask(int res, int part, int r0, int c0, int size) {
  PartMaskStack m(res, res);
  for (int r = r0; r < r0 + size; ++r)
    for (int c = c0; c < c0 + size; ++c) m.at(part, r, c) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("geman-mcclure closed forms") {
  CHECK(geman_mcclure(0.0, 100.0) == 0.0);
  CHECK(geman_mcclure(100.0, 100.0) == doctest::Approx(5000.0).epsilon(1e-15));
  double prev = 0.0;
  for (double e = 1.0; e < 1e7; e *= 3.0) {
    const double v = geman_mcclure(e, 100.0);
    CHECK(v < 10000.0);
    CHECK(v > prev);
    CHECK(v == geman_mcclure(-e, 100.0));
    prev = v;
  }
  CHECK(geman_mcclure(1e6, 100.0) == doctest::Approx(10000.0).epsilon(1e-7));
  CHECK_THROWS_AS(geman_mcclure(1.0, 0.0), ConfigError);
  CHECK_THROWS_AS(geman_mcclure(1.0, -2.0), ConfigError);
  for (double e : {-3.0, -0.2, 0.4, 1.7, 250.0}) {
    const double h = 1e-6 * std::max(1.0, std::abs(e));
    const double fd = (geman_mcclure(e + h, 100.0) - geman_mcclure(e - h, 100.0)) / (2 * h);
    CHECK(geman_mcclure_derivative(e, 100.0) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("reprojection loss examples") {
  Points2 gt(3, 2);
  gt << 0.1, 0.2, -0.4, 0.3, 0.5, -0.5;
  std::vector<std::uint8_t> vis = {1, 1, 1};
  CHECK(reprojection_loss(gt, gt, vis, 100.0).value == 0.0);

  std::vector<std::uint8_t> none = {0, 0, 0};
  const auto r = reprojection_loss(gt, gt + Points2::Ones(3, 2), none, 100.0);
  CHECK(r.value == 0.0);
  CHECK(r.no_visible);

  Points2 pred = gt;
  pred.row(1) += Eigen::RowVector2d(3.0, 4.0);
  pred.row(2) += Eigen::RowVector2d(50.0, 50.0);
  std::vector<std::uint8_t> one = {0, 1, 0};
  const double expect = 1e4 * 25.0 / (1e4 + 25.0);
  CHECK(reprojection_loss(pred, gt, one, 100.0).value == doctest::Approx(expect).epsilon(1e-14));
  CHECK(expect == doctest::Approx(24.94).epsilon(1e-3));
  // Per-coordinate mode sums the two one-dimensional penalties.
  CHECK(reprojection_loss(pred, gt, one, 100.0, GmMode::coord).value ==
        doctest::Approx(geman_mcclure(3.0, 100.0) + geman_mcclure(4.0, 100.0)).epsilon(1e-14));

  CHECK_THROWS_AS(reprojection_loss(pred.topRows(2), gt, vis, 100.0), DimensionError);
  CHECK_THROWS_AS(reprojection_loss(pred, gt, one, 0.0), ConfigError);
}

TEST_CASE("reprojection gradient matches differences") {
  Rng rng(4);
  Points2 pred(5, 2), gt(5, 2);
  for (int i = 0; i < 5; ++i)
    for (int c = 0; c < 2; ++c) {
      pred(i, c) = rng.uniform(-1, 1);
      gt(i, c) = rng.uniform(-1, 1);
    }
  std::vector<std::uint8_t> vis = {1, 0, 1, 1, 1};
  for (GmMode mode : {GmMode::keypoint, GmMode::coord}) {
    Points2 g;
    reprojection_loss(pred, gt, vis, 0.5, mode, &g);
    for (int i = 0; i < 5; ++i)
      for (int c = 0; c < 2; ++c) {
        Points2 a = pred, b = pred;
        a(i, c) += 1e-6;
        b(i, c) -= 1e-6;
        const double fd =
            (reprojection_loss(a, gt, vis, 0.5, mode).value - reprojection_loss(b, gt, vis, 0.5, mode).value) / 2e-6;
        CHECK(g(i, c) == doctest::Approx(fd).epsilon(1e-6).scale(1e-8));
      }
  }
}

TEST_CASE("pose prior examples") {
  Rng rng(2);
  const Vector theta = test::random_vector(rng, 48, 0.4);
  CHECK(pose_prior_loss(prior().mean, prior()) == 0.0);
  CHECK(pose_prior_loss(theta, PosePrior::identity(48)) == doctest::Approx(theta.squaredNorm()).epsilon(1e-14));
  CHECK_THROWS_AS(pose_prior_loss(theta.head(45), prior()), DimensionError);

  Vector g;
  pose_prior_loss(theta, prior(), &g);
  Vector fd(48);
  for (int i = 0; i < 48; ++i) {
    Vector a = theta, b = theta;
    a(i) += 1e-6;
    b(i) -= 1e-6;
    fd(i) = (pose_prior_loss(a, prior()) - pose_prior_loss(b, prior())) / 2e-6;
  }
  CHECK((g - fd).cwiseAbs().maxCoeff() < 1e-5 * fd.cwiseAbs().maxCoeff());
}

TEST_CASE("pose prior whitens its training draws") {
  Rng rng(9, 1);
  std::vector<Vector> draws;
  for (int i = 0; i < 2000; ++i) draws.push_back(sample_pose(toy(), rng));
  const PosePrior p = PosePrior::fit(draws, 12);
  CHECK(p.latent_dim() == 12);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(12, 12);
  for (const auto& d : draws) {
    const Vector z = p.whitening * (d - p.mean);
    cov += z * z.transpose();
  }
  cov /= static_cast<double>(draws.size() - 1);
  CHECK((cov - Eigen::MatrixXd::Identity(12, 12)).cwiseAbs().maxCoeff() < 1e-9);
  // Sign convention: the largest-magnitude entry of every row is positive.
  for (int r = 0; r < 12; ++r) {
    Eigen::Index arg;
    p.whitening.row(r).cwiseAbs().maxCoeff(&arg);
    CHECK(p.whitening(r, arg) > 0.0);
  }
  CHECK_THROWS_AS(PosePrior::fit({draws[0]}, 12), DataError);
  CHECK_THROWS_AS(PosePrior::fit(draws, 49), ConfigError);
}

TEST_CASE("pose prior monte carlo mean is the latent dimension") {
  Rng rng(1234, 77);
  double sum = 0.0;
  for (int i = 0; i < 1000; ++i) sum += pose_prior_loss(sample_pose(toy(), rng), prior());
  const double mean = sum / 1000.0;
  MESSAGE("mean prior loss " << mean);
  CHECK(mean > 0.8 * 12);
  CHECK(mean < 1.2 * 12);
}

TEST_CASE("shape loss examples") {
  const int res = 16;
  PartMaskStack full(res, res);
  for (int part = 1; part <= kNumParts; ++part)
    for (int c = 0; c < 2 * part; ++c) full.at(part, part, c) = 1.0;
  CHECK(shape_loss(full, full) == 0.0);

  PartMaskStack a(res, res), b(res, res);
  for (int part = 1; part <= kNumParts; ++part) {
    a.at(part, 0, part) = 1.0;
    b.at(part, 15, part) = 1.0;
  }
  CHECK(shape_loss(a, b) == 6.0);

  const PartMaskStack p = square_mask(res, 3, 2, 2, 8);
  const PartMaskStack q = square_mask(res, 3, 2, 6, 8);
  // 8x8 squares offset by half a side: I = 32, U = 96.
  long inter = 0, uni = 0;
  for (std::size_t i = 0; i < p.pixels(); ++i) {
    inter += p.channel(3)[i] > 0 && q.channel(3)[i] > 0;
    uni += p.channel(3)[i] > 0 || q.channel(3)[i] > 0;
  }
  CHECK(inter * 3 == uni);
  CHECK(shape_loss(p, q) == doctest::Approx(1.0 - 1.0 / 3.0).epsilon(1e-15));

  PartMaskStack empty(res, res);
  CHECK(shape_loss(empty, empty) == 0.0);
  CHECK(shape_loss(empty, p) == 1.0);
  CHECK(shape_loss(p, empty) == 1.0);
  CHECK_THROWS_AS(shape_loss(PartMaskStack(8, 8), p), DimensionError);
}

TEST_CASE("shape loss bounds and interpolation") {
  Rng rng(3);
  const int res = 12;
  for (int trial = 0; trial < 20; ++trial) {
    PartMaskStack soft(res, res), gt(res, res);
    for (std::size_t i = 0; i < soft.data.size(); ++i) {
      soft.data[i] = rng.uniform();
      gt.data[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
    }
    const double start = shape_loss(soft, gt);
    CHECK(start >= 0.0);
    CHECK(start <= 6.0);
    double prev = start;
    for (double t : {0.2, 0.4, 0.6, 0.8, 1.0}) {
      PartMaskStack mix(res, res);
      for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = (1 - t) * soft.data[i] + t * gt.data[i];
      const double v = shape_loss(mix, gt);
      CHECK(v < prev);
      prev = v;
    }
    CHECK(prev == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
  }
}

TEST_CASE("shape loss gradient matches differences") {
  Rng rng(8);
  const int res = 6;
  PartMaskStack soft(res, res), gt(res, res);
  for (std::size_t i = 0; i < soft.data.size(); ++i) {
    soft.data[i] = rng.uniform(0.05, 0.95);
    gt.data[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
  }
  PartMaskStack g;
  shape_loss(soft, gt, &g);
  for (std::size_t i = 0; i < soft.data.size(); i += 5) {
    PartMaskStack a = soft, b = soft;
    a.data[i] += 1e-6;
    b.data[i] -= 1e-6;
    const double fd = (shape_loss(a, gt) - shape_loss(b, gt)) / 2e-6;
    CHECK(g.data[i] == doctest::Approx(fd).epsilon(1e-6).scale(1e-6));
  }
}

TEST_CASE("anchor loss") {
  MeshParams a = MeshParams::zeros(toy());
  a.scale = 0.8;
  MeshParams b = a;
  CHECK(anchor_loss(a, b) == 0.0);
  b.scale = 1.3;
  CHECK(anchor_loss(a, b) == doctest::Approx(0.25).epsilon(1e-15));
  Rng rng(5);
  MeshParams c = MeshParams::unflatten(toy(), test::random_vector(rng, MeshParams::flat_size(toy()), 0.3));
  CHECK(anchor_loss(a, c) == anchor_loss(c, a));
  CHECK(anchor_loss(a, c) == doctest::Approx((a.flatten() - c.flatten()).squaredNorm()).epsilon(1e-15));
}

TEST_CASE("q objective at the ground truth") {
  const Observation obs = sample_obs(1);
  LossConfig cfg;
  cfg.weights.shape = 0.0;
  LossTerms t;
  const double total = q_objective(toy(), *obs.gt, obs, prior(), cfg, &t);
  CHECK(t.l2d < 1e-24);
  CHECK(t.shape == 0.0);
  const double priors = cfg.weights.theta * pose_prior_loss(obs.gt->theta, prior()) +
                        cfg.weights.beta * obs.gt->beta.squaredNorm();
  CHECK(total == doctest::Approx(priors).epsilon(1e-12));

  LossConfig zero;
  zero.weights = {0.0, 0.0, 0.0, 0.0, 0.0};
  Rng rng(6);
  MeshParams p = MeshParams::unflatten(toy(), test::random_vector(rng, MeshParams::flat_size(toy()), 0.2));
  p.scale = 0.9;
  CHECK(q_objective(toy(), p, obs, prior(), zero) == 0.0);

  LossConfig bad;
  bad.weights.theta = -1.0;
  CHECK_THROWS_AS(q_objective(toy(), p, obs, prior(), bad), ConfigError);
}

TEST_CASE("q objective gradient passes fd_check") {
  const Observation obs = sample_obs(2, 0.01);
  LossConfig cfg;
  cfg.sigma = 100.0;
  const MeshObjective mesh(toy(), obs, &prior(), cfg);
  const Objective f = [&](const Vector& x, Vector* g) { return mesh.evaluate(x, {true, true, nullptr}, g); };
  Rng rng(21);
  for (int trial = 0; trial < 3; ++trial) {
    Vector x = obs.gt->flatten() + test::random_vector(rng, MeshParams::flat_size(toy()), 0.05);
    const FdReport rep = fd_check(f, x, 1e-5, 1e-3);
    MESSAGE("q fd max rel " << rep.max_rel_error);
    CHECK(rep.passed);
  }
  for (GmMode mode : {GmMode::keypoint, GmMode::coord}) {
    LossConfig c2 = cfg;
    c2.gm_per = mode;
    c2.sigma = 0.1;
    const MeshObjective m2(toy(), obs, &prior(), c2);
    const Objective f2 = [&](const Vector& x, Vector* g) { return m2.evaluate(x, {true, false, nullptr}, g); };
    const Vector x = obs.gt->flatten() + test::random_vector(rng, MeshParams::flat_size(toy()), 0.1);
    CHECK(fd_check(f2, x, 1e-5, 1e-4).passed);
  }
}

TEST_CASE("p objective examples") {
  const Regressor reg = Regressor::for_model(toy());
  const Vector alpha = Vector::Zero(reg.param_count());
  // With every weight zero, Φ outputs β = 0, θ = 0, s = softplus(0) + 1e-3,
  // t = 0; a noiseless observation of exactly that Θ scores 0.
  const MeshParams out = MeshParams::unflatten(toy(), reg.predict_flat(alpha, Vector::Zero(reg.arch().input_dim)));
  CHECK(out.scale == doctest::Approx(std::log(2.0) + 1e-3).epsilon(1e-15));
  Rng rng(1);
  const Observation obs = make_observation(toy(), out, "p0", 0.0, rng, 32);
  LossConfig cfg;
  LossTerms t;
  CHECK(p_objective(toy(), reg, alpha, obs, std::nullopt, cfg, &t) < 1e-24);
  CHECK(t.shape == 0.0);
  CHECK(t.anchor == 0.0);

  const Observation noisy = sample_obs(3, 0.01);
  const Vector alpha1 = reg.init(5);
  const MeshParams anchor = reg.predict(toy(), alpha1, featurize(noisy));
  p_objective(toy(), reg, alpha1, noisy, anchor, cfg, &t);
  CHECK(t.anchor == 0.0);
  CHECK(t.shape > 0.0);
  CHECK(t.total == doctest::Approx(t.l2d + t.shape).epsilon(1e-14));
}

TEST_CASE("p objective gradient passes fd_check") {
  const Regressor reg = Regressor::for_model(toy());
  const Observation obs = sample_obs(4, 0.01);
  LossConfig cfg;
  cfg.sigma = 100.0;
  const MeshObjective mesh(toy(), obs, nullptr, cfg);
  const Vector alpha = reg.init(3);
  Vector anchor = reg.predict_flat(alpha, featurize(obs));
  Rng rng(4);
  anchor += test::random_vector(rng, static_cast<int>(anchor.size()), 0.05);
  const RegressorObjective obj(reg, mesh, anchor);
  const Objective f = [&](const Vector& a, Vector* g) { return obj.evaluate(a, g); };
  std::vector<int> coords;
  for (int i = 0; i < 40; ++i) coords.push_back(static_cast<int>(rng.index(reg.param_count())));
  // The output-layer biases map one-to-one onto Θ.
  for (int i = 0; i < MeshParams::flat_size(toy()); i += 7) coords.push_back(reg.param_count() - MeshParams::flat_size(toy()) + i);
  const FdReport rep = fd_check(f, alpha, 1e-5, 1e-3, coords);
  MESSAGE("p fd max rel " << rep.max_rel_error);
  CHECK(rep.passed);

  Vector g1(alpha.size()), g2(alpha.size());
  const double v1 = obj.evaluate(alpha, &g1);
  const double v2 = obj.evaluate(alpha, &g2);
  CHECK(v1 == v2);
  CHECK(g1 == g2);
}
