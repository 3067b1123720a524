#include <doctest.h>

#include <Eigen/Geometry>

#include "omrfit/data_synth.hpp"
#include "omrfit/errors.hpp"
#include "omrfit/metrics.hpp"
#include "support.hpp"

using namespace omrfit;

namespace {

const BodyModel& toy() {
  static const BodyModel m = make_toy_model();
  return m;
}

Points3 random_points(Rng& rng, int n) {
  Points3 p(n, 3);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = rng.uniform(-0.5, 0.5);
  return p;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  return Eigen::AngleAxisd(rng.uniform(0.0, 3.0), axis.normalized()).toRotationMatrix();
}

Points3 apply(double s, const Eigen::Matrix3d& r, const Eigen::Vector3d& t, const Points3& p) {
  return ((s * r * p.transpose()).colwise() + t).transpose();
}

LabelImage square_labels(int res, int label, int r0, int c0, int size) {
  LabelImage l(res, res);
  for (int r = r0; r < r0 + size; ++r)
    for (int c = c0; c < c0 + size; ++c) l.at(r, c) = static_cast<std::uint8_t>(label);
  return l;
}

Observation with_beta(const Vector& beta, const std::string& id) {
  Observation o;
  o.sample_id = id;
  MeshParams p = MeshParams::zeros(toy());
  p.beta = beta;
  o.gt = p;
  return o;
}

}  // namespace

TEST_CASE("mpjpe examples") {
  Rng rng(1);
  const Points3 gt = random_points(rng, 16);
  CHECK(mpjpe(gt, gt) == 0.0);
  Points3 shifted = gt;
  shifted.rowwise() += Eigen::RowVector3d(0.3, -1.2, 2.0);
  CHECK(mpjpe(shifted, gt) < 1e-9);
  CHECK(mpjpe(shifted, gt, false) > 1000.0);
  Points3 one = gt;
  one(7, 1) += 0.010;
  CHECK(mpjpe(one, gt) == doctest::Approx(0.625).epsilon(1e-9));
  CHECK_THROWS_AS(mpjpe(gt.topRows(15), gt), DimensionError);
}

TEST_CASE("pa-mpjpe is similarity invariant") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Points3 gt = random_points(rng, 16);
    CHECK(pa_mpjpe(gt, gt) < 1e-9);
    const Points3 pred = apply(2.0, random_rotation(rng), {rng.normal(), rng.normal(), rng.normal()}, gt);
    CHECK(pa_mpjpe(pred, gt) < 1e-9);
    const Points3 noisy = pred + 0.01 * random_points(rng, 16);
    const double pa = pa_mpjpe(noisy, gt);
    // PA residual is no worse than the root-alignment transform's.
    Points3 rooted = noisy;
    rooted.rowwise() += gt.row(0) - noisy.row(0);
    CHECK(pa <= mpjpe(noisy, gt) + 1e-9);
    CHECK(pa >= 0.0);
  }
}

TEST_CASE("procrustes matches a brute-force search on a tetrahedron") {
  Points3 gt(4, 3);
  gt << 0, 0, 0, 0.3, 0, 0, 0, 0.3, 0, 0, 0, 0.3;
  Rng rng(3);
  Points3 pred = apply(1.4, random_rotation(rng), {0.1, -0.2, 0.05}, gt);
  pred.row(2) += Eigen::RowVector3d(0.04, -0.03, 0.05);

  auto sse = [&](double s, const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
    return (apply(s, r, t, pred) - gt).squaredNorm();
  };
  const Similarity ps = procrustes(pred, gt);
  const double best_closed = sse(ps.scale, ps.rotation, ps.translation);

  // Annealed random search over (log s, rotation vector, t) from the identity.
  double ls = 0.0;
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  double cur = sse(1.0, r, t);
  for (int it = 0; it < 60000; ++it) {
    const double step = 0.5 * std::pow(1e-3, it / 60000.0);
    const double ls2 = ls + step * rng.normal();
    const Eigen::Vector3d w(step * rng.normal(), step * rng.normal(), step * rng.normal());
    const Eigen::Matrix3d r2 = Eigen::AngleAxisd(w.norm(), w.norm() > 0 ? w.normalized() : Eigen::Vector3d::UnitX()) * r;
    const Eigen::Vector3d t2 = t + step * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    const double v = sse(std::exp(ls2), r2, t2);
    if (v < cur) {
      cur = v;
      ls = ls2;
      r = r2;
      t = t2;
    }
  }
  MESSAGE("closed form " << best_closed << " search " << cur);
  CHECK(best_closed <= cur * (1.0 + 1e-9));
  CHECK(cur <= best_closed * 1.01);
  const double pa = pa_mpjpe(pred, gt);
  const double searched = 1000.0 * (apply(std::exp(ls), r, t, pred) - gt).rowwise().norm().mean();
  CHECK(pa == doctest::Approx(searched).epsilon(0.01));
}

TEST_CASE("pa-mpjpe rejects degenerate ground truth") {
  Points3 line(5, 3);
  for (int i = 0; i < 5; ++i) line.row(i) = Eigen::RowVector3d(i, 2.0 * i, -i);
  Rng rng(4);
  CHECK_THROWS_AS(pa_mpjpe(random_points(rng, 5), line), MetricError);
  CHECK_THROWS_AS(pa_mpjpe(random_points(rng, 2), random_points(rng, 2)), MetricError);
}

TEST_CASE("pve-t closed form and symmetry") {
  const int n = toy().n_vertices;
  for (int j = 0; j < toy().n_shape; ++j) {
    const double delta = 0.7;
    Vector a = Vector::Zero(toy().n_shape), b = a;
    a(j) = 0.2;
    b(j) = 0.2 + delta;
    double oracle = 0.0;
    for (int i = 0; i < n; ++i)
      oracle += Eigen::Vector3d(toy().shape_dirs(3 * i, j), toy().shape_dirs(3 * i + 1, j),
                                toy().shape_dirs(3 * i + 2, j))
                    .norm();
    oracle *= 1000.0 * delta / n;
    CHECK(std::abs(pve_t(toy(), a, b) - oracle) < 1e-9);
  }
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Vector a = test::random_vector(rng, 10, 1.0);
    const Vector b = test::random_vector(rng, 10, 1.0);
    const Vector c = test::random_vector(rng, 10, 1.0);
    CHECK(pve_t(toy(), a, a) == 0.0);
    CHECK(std::abs(pve_t(toy(), a, b) - pve_t(toy(), b, a)) < 1e-12);
    CHECK(pve_t(toy(), a, c) <= pve_t(toy(), a, b) + pve_t(toy(), b, c) + 1e-9);
  }
  CHECK_THROWS_AS(pve_t(toy(), Vector::Zero(9), Vector::Zero(10)), DimensionError);
}

TEST_CASE("per-part pve-t") {
  const Vector zero = Vector::Zero(10);
  const PartPveT same = per_part_pve_t(toy(), zero, zero);
  for (const auto& g : {same.torso, same.legs, same.arms, same.head}) {
    REQUIRE(g.has_value());
    CHECK(*g == 0.0);
  }

  const std::vector<int> parts = vertex_parts(toy());
  std::array<int, 4> count{};  // torso, legs, arms, head
  for (int p : parts) count[p == 2 ? 0 : p >= 5 ? 1 : p >= 3 ? 2 : 3]++;
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const Vector a = test::random_vector(rng, 10, 1.0);
    const Vector b = test::random_vector(rng, 10, 1.0);
    const PartPveT pp = per_part_pve_t(toy(), a, b);
    const double combined = (count[0] * *pp.torso + count[1] * *pp.legs + count[2] * *pp.arms + count[3] * *pp.head) /
                            static_cast<double>(toy().n_vertices);
    CHECK(std::abs(combined - pve_t(toy(), a, b)) < 1e-9);
  }

  Vector girth = zero;
  girth(0) = 1.0;
  const PartPveT g = per_part_pve_t(toy(), girth, zero);
  CHECK(*g.torso > *g.legs);
  CHECK(*g.torso > *g.arms);
  CHECK(*g.torso > *g.head);
}

TEST_CASE("segmentation scores") {
  const LabelImage a = square_labels(16, 2, 2, 2, 8);
  const SegScores same = seg_scores(a, a);
  CHECK(same.miou == 1.0);
  CHECK(same.fb_acc == 1.0);
  CHECK(same.fb_f1 == 1.0);
  CHECK(same.part_acc == 1.0);
  CHECK(same.part_f1 == 1.0);

  const LabelImage far = square_labels(16, 2, 12, 12, 4);
  const LabelImage near = square_labels(16, 2, 0, 0, 4);
  const SegScores d = seg_scores(far, near);
  CHECK(d.miou == 0.0);
  CHECK(d.fb_f1 == 0.0);

  const LabelImage b = square_labels(16, 2, 2, 6, 8);
  CHECK(miou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(seg_scores(a, b).fb_acc == doctest::Approx(1.0 - 64.0 / 256.0).epsilon(1e-15));

  CHECK(miou(LabelImage(8, 8), LabelImage(8, 8)) == 1.0);
  CHECK_THROWS_AS(seg_scores(a, LabelImage(8, 8)), DimensionError);
}

TEST_CASE("miou is invariant to label permutation") {
  Rng rng(7);
  const std::array<std::uint8_t, 7> perm = {0, 4, 6, 1, 3, 2, 5};
  for (int trial = 0; trial < 10; ++trial) {
    LabelImage a(12, 12), b(12, 12);
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
      a.labels[i] = static_cast<std::uint8_t>(rng.index(7));
      b.labels[i] = rng.uniform() < 0.6 ? a.labels[i] : static_cast<std::uint8_t>(rng.index(7));
    }
    LabelImage pa = a, pb = b;
    for (auto& l : pa.labels) l = perm[l];
    for (auto& l : pb.labels) l = perm[l];
    CHECK(std::abs(miou(a, b) - miou(pa, pb)) < 1e-15);
    CHECK(std::abs(seg_scores(a, b).part_f1 - seg_scores(pa, pb).part_f1) < 1e-15);
  }
}

TEST_CASE("extreme shape filter") {
  const double thr = calibrated_shape_threshold(toy());
  MESSAGE("calibrated threshold " << thr << " mm");
  Vector boundary = Vector::Zero(10);
  boundary(0) = 1.5;
  Vector below = Vector::Zero(10);
  below(0) = 1.5 * (1.0 - 1e-9);
  std::vector<Observation> set = {with_beta(Vector::Zero(10), "zero"), with_beta(boundary, "boundary"),
                                  with_beta(below, "below")};
  const auto kept = extreme_shape_filter(toy(), set, thr);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].sample_id == "boundary");
  CHECK(extreme_shape_filter(toy(), set, 0.0).size() == 3);
  CHECK(extreme_shape_filter(toy(), {with_beta(Vector::Zero(10), "z")}).empty());

  SynthConfig cfg;
  cfg.n = 200;
  cfg.distribution = Distribution::obese;
  cfg.seed = 2;
  cfg.resolution = 16;
  const Dataset obese = synth_dataset(toy(), cfg, 1);
  const double frac = static_cast<double>(extreme_shape_filter(toy(), obese.samples, thr).size()) / obese.samples.size();
  MESSAGE("obese retained " << frac);
  CHECK(frac >= 0.9);
  cfg.distribution = Distribution::normal;
  const Dataset normal = synth_dataset(toy(), cfg, 1);
  CHECK(extreme_shape_filter(toy(), normal.samples, thr).size() < obese.samples.size() / 2);
}

TEST_CASE("evaluate_sample and report formats") {
  Rng rng(8);
  const MeshParams gt = sample_params(toy(), Distribution::normal, rng);
  const Observation obs = make_observation(toy(), gt, "a", 0.0, rng, 32);
  const MetricRow perfect = evaluate_sample(toy(), gt, obs);
  REQUIRE(perfect.values.size() == metric_columns().size());
  for (std::size_t c = 0; c < 7; ++c) CHECK(*perfect.values[c] < 1e-9);
  for (std::size_t c = 7; c < 12; ++c) CHECK(*perfect.values[c] == 1.0);

  MeshParams off = gt;
  off.beta(0) += 1.0;
  MetricRow second = evaluate_sample(toy(), off, obs);
  second.id = "b";
  second.values[6] = std::nullopt;
  const MetricReport rep = make_report({perfect, second});
  CHECK(*rep.mean_of("pve_t_mm") == doctest::Approx((*perfect.values[2] + *second.values[2]) / 2).epsilon(1e-15));
  CHECK(*rep.mean_of("pve_t_head_mm") == *perfect.values[6]);
  CHECK_THROWS_AS(rep.mean_of("nope"), ConfigError);

  const std::string csv = rep.to_csv();
  CHECK(csv.rfind("sample_id,mpjpe_mm,pa_mpjpe_mm,pve_t_mm,pve_t_torso_mm,pve_t_legs_mm,pve_t_arms_mm,pve_t_head_mm,"
                  "miou,fb_acc,fb_f1,part_acc,part_f1\n",
                  0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.find("\nmean,") != std::string::npos);
  CHECK(csv.find(",,") != std::string::npos);
  const json j = json::parse(rep.to_json_text());
  CHECK(j["samples"].size() == 2);
  CHECK(j["samples"][1]["pve_t_head_mm"].is_null());
  CHECK(j["mean"]["sample_id"] == "mean");

  Observation no_gt = obs;
  no_gt.gt.reset();
  CHECK_THROWS_AS(evaluate_sample(toy(), gt, no_gt), MetricError);
}
