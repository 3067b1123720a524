#include "omrfit/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "omrfit/data_synth.hpp"
#include "omrfit/errors.hpp"
#include "omrfit/io.hpp"

namespace omrfit {

double mpjpe(const Points3& pred, const Points3& gt, bool root_align) {
  require_dims(pred.rows() == gt.rows() && gt.rows() > 0, "joint sets differ in size");
  Points3 d = pred - gt;
  if (root_align) {
    const Eigen::RowVector3d root = d.row(0);
    d.rowwise() -= root;
  }
  return 1000.0 * d.rowwise().norm().mean();
}

Similarity procrustes(const Points3& pred, const Points3& gt) {
  require_dims(pred.rows() == gt.rows(), "joint sets differ in size");
  const Eigen::Index n = gt.rows();
  if (n < 3) throw MetricError("Procrustes alignment needs at least 3 joints");
  const Eigen::RowVector3d mp = pred.colwise().mean();
  const Eigen::RowVector3d mg = gt.colwise().mean();
  const Eigen::MatrixXd p = pred.rowwise() - mp;
  const Eigen::MatrixXd g = gt.rowwise() - mg;
  const Eigen::JacobiSVD<Eigen::MatrixXd> gsvd(g);
  const auto sv = gsvd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-9 * sv(0)) throw MetricError("ground-truth joints are collinear");

  const Eigen::Matrix3d cov = g.transpose() * p / static_cast<double>(n);
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d d = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d(2) = -1.0;
  Similarity s;
  s.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  const double var_p = p.squaredNorm() / static_cast<double>(n);
  s.scale = var_p > 0.0 ? svd.singularValues().dot(d) / var_p : 0.0;
  s.translation = mg.transpose() - s.scale * s.rotation * mp.transpose();
  return s;
}

double pa_mpjpe(const Points3& pred, const Points3& gt) {
  const Similarity s = procrustes(pred, gt);
  const Points3 aligned = ((s.scale * s.rotation * pred.transpose()).colwise() + s.translation).transpose();
  return 1000.0 * (aligned - gt).rowwise().norm().mean();
}

double pve_t(const BodyModel& model, const Vector& beta_pred, const Vector& beta_gt) {
  const Points3 a = tpose_vertices(model, beta_pred);
  const Points3 b = tpose_vertices(model, beta_gt);
  return 1000.0 * (a - b).rowwise().norm().mean();
}

PartPveT per_part_pve_t(const BodyModel& model, const Vector& beta_pred, const Vector& beta_gt) {
  const Points3 a = tpose_vertices(model, beta_pred);
  const Points3 b = tpose_vertices(model, beta_gt);
  const std::vector<int> parts = vertex_parts(model);
  // head, torso, arms, legs
  std::array<double, 4> sum{};
  std::array<int, 4> count{};
  for (int i = 0; i < model.n_vertices; ++i) {
    const auto part = static_cast<BodyPart>(parts[i]);
    int g = 0;
    switch (part) {
      case BodyPart::head: g = 0; break;
      case BodyPart::torso: g = 1; break;
      case BodyPart::left_arm:
      case BodyPart::right_arm: g = 2; break;
      case BodyPart::left_leg:
      case BodyPart::right_leg: g = 3; break;
    }
    sum[g] += (a.row(i) - b.row(i)).norm();
    ++count[g];
  }
  auto group = [&](int g) -> std::optional<double> {
    if (count[g] == 0) return std::nullopt;
    return 1000.0 * sum[g] / count[g];
  };
  PartPveT out;
  out.head = group(0);
  out.torso = group(1);
  out.arms = group(2);
  out.legs = group(3);
  return out;
}

namespace {

void check_same_size(const LabelImage& a, const LabelImage& b) {
  require_dims(a.width == b.width && a.height == b.height && a.labels.size() == b.labels.size(),
               "label maps differ in resolution");
}

double f1(long tp, long fp, long fn) {
  const long denom = 2 * tp + fp + fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

double miou(const LabelImage& pred, const LabelImage& gt) {
  check_same_size(pred, gt);
  double sum = 0.0;
  int present = 0;
  for (int part = 1; part <= kNumParts; ++part) {
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
      const bool a = pred.labels[i] == part, b = gt.labels[i] == part;
      inter += a && b;
      uni += a || b;
    }
    if (uni == 0) continue;
    sum += static_cast<double>(inter) / static_cast<double>(uni);
    ++present;
  }
  return present == 0 ? 1.0 : sum / present;
}

SegScores seg_scores(const LabelImage& pred, const LabelImage& gt) {
  check_same_size(pred, gt);
  SegScores s;
  s.miou = miou(pred, gt);
  const std::size_t n = gt.labels.size();
  if (n == 0) throw DimensionError("empty label maps");
  long fb_correct = 0, tp = 0, fp = 0, fn = 0, part_correct = 0;
  std::array<long, kNumParts + 1> true_pos{}, pred_count{}, gt_count{};
  for (std::size_t i = 0; i < n; ++i) {
    const int p = pred.labels[i], g = gt.labels[i];
    const bool pf = p > 0, gf = g > 0;
    fb_correct += pf == gf;
    tp += pf && gf;
    fp += pf && !gf;
    fn += !pf && gf;
    part_correct += p == g;
    if (p <= kNumParts) ++pred_count[p];
    ++gt_count[g];
    if (p == g) ++true_pos[g];
  }
  s.fb_acc = static_cast<double>(fb_correct) / static_cast<double>(n);
  s.fb_f1 = f1(tp, fp, fn);
  s.part_acc = static_cast<double>(part_correct) / static_cast<double>(n);
  double f1_sum = 0.0;
  int labels = 0;
  for (int l = 0; l <= kNumParts; ++l) {
    if (gt_count[l] == 0) continue;
    f1_sum += f1(true_pos[l], pred_count[l] - true_pos[l], gt_count[l] - true_pos[l]);
    ++labels;
  }
  s.part_f1 = labels == 0 ? 1.0 : f1_sum / labels;
  return s;
}

std::vector<Observation> extreme_shape_filter(const BodyModel& model, const std::vector<Observation>& samples,
                                              double threshold_mm) {
  std::vector<Observation> out;
  const Vector mean_shape = Vector::Zero(model.n_shape);
  for (const auto& obs : samples) {
    if (!obs.gt) continue;
    if (pve_t(model, obs.gt->beta, mean_shape) >= threshold_mm) out.push_back(obs);
  }
  return out;
}

double calibrated_shape_threshold(const BodyModel& model, double girth) {
  if (model.n_shape < 1) throw ConfigError("model has no shape coefficients");
  Vector beta = Vector::Zero(model.n_shape);
  beta(0) = girth;
  return pve_t(model, beta, Vector::Zero(model.n_shape));
}

MetricRow evaluate_sample(const BodyModel& model, const MeshParams& pred, const Observation& obs, bool root_align) {
  if (!obs.gt) throw MetricError("sample " + obs.sample_id + " has no ground-truth parameters");
  const BodyOutput p = forward(model, pred);
  const BodyOutput g = forward(model, *obs.gt);
  MetricRow row;
  row.id = obs.sample_id;
  row.values.reserve(metric_columns().size());
  row.values.push_back(mpjpe(p.joints, g.joints, root_align));
  row.values.push_back(pa_mpjpe(p.joints, g.joints));
  row.values.push_back(pve_t(model, pred.beta, obs.gt->beta));
  const PartPveT parts = per_part_pve_t(model, pred.beta, obs.gt->beta);
  row.values.push_back(parts.torso);
  row.values.push_back(parts.legs);
  row.values.push_back(parts.arms);
  row.values.push_back(parts.head);
  if (obs.labels.width > 0) {
    const LabelImage labels = render_labels(model, pred, obs.labels.width);
    const SegScores s = seg_scores(labels, obs.labels);
    for (double v : {s.miou, s.fb_acc, s.fb_f1, s.part_acc, s.part_f1}) row.values.push_back(v);
  } else {
    row.values.resize(metric_columns().size());
  }
  return row;
}

MetricReport make_report(std::vector<MetricRow> rows) {
  MetricReport r;
  const std::size_t nc = metric_columns().size();
  r.mean.id = "mean";
  r.mean.values.assign(nc, std::nullopt);
  for (std::size_t c = 0; c < nc; ++c) {
    double sum = 0.0;
    int n = 0;
    for (const auto& row : rows) {
      require_dims(row.values.size() == nc, "metric row has the wrong width");
      if (row.values[c]) {
        sum += *row.values[c];
        ++n;
      }
    }
    if (n > 0) r.mean.values[c] = sum / n;
  }
  r.rows = std::move(rows);
  return r;
}

std::string format_metric(const std::optional<double>& v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

std::string MetricReport::to_csv() const {
  std::string out = "sample_id";
  for (const auto& c : metric_columns()) out += "," + c;
  out += "\n";
  auto emit = [&](const MetricRow& row) {
    out += row.id;
    for (const auto& v : row.values) out += "," + format_metric(v);
    out += "\n";
  };
  for (const auto& row : rows) emit(row);
  emit(mean);
  return out;
}

std::string MetricReport::to_json_text() const {
  auto row_json = [](const MetricRow& row) {
    json j = {{"sample_id", row.id}};
    for (std::size_t c = 0; c < row.values.size(); ++c)
      j[metric_columns()[c]] = row.values[c] ? json(*row.values[c]) : json(nullptr);
    return j;
  };
  json samples = json::array();
  for (const auto& row : rows) samples.push_back(row_json(row));
  return json{{"samples", samples}, {"mean", row_json(mean)}}.dump(1) + "\n";
}

std::optional<double> MetricReport::mean_of(const std::string& column) const {
  const auto& cols = metric_columns();
  for (std::size_t c = 0; c < cols.size(); ++c)
    if (cols[c] == column) return mean.values[c];
  throw ConfigError("unknown metric column '" + column + "'");
}

}  // namespace omrfit
