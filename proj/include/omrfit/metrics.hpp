#pragma once

#include <optional>
#include <string>
#include <vector>

#include "omrfit/body_model.hpp"
#include "omrfit/observation.hpp"
#include "omrfit/renderer.hpp"
#include "omrfit/types.hpp"

namespace omrfit {

// Millimetres. Both sets are translated so joint 0 sits at the origin
// unless root_align is false.
double mpjpe(const Points3& pred, const Points3& gt, bool root_align = true);

// Mean joint error after the least-squares similarity transform of pred
// onto gt.
double pa_mpjpe(const Points3& pred, const Points3& gt);

// Similarity (s, R, t) minimizing sum |s R p + t - g|^2.
struct Similarity {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};
Similarity procrustes(const Points3& pred, const Points3& gt);

double pve_t(const BodyModel& model, const Vector& beta_pred, const Vector& beta_gt);

struct PartPveT {
  std::optional<double> torso, legs, arms, head;
};
PartPveT per_part_pve_t(const BodyModel& model, const Vector& beta_pred, const Vector& beta_gt);

struct SegScores {
  double miou = 0.0;
  double fb_acc = 0.0;
  double fb_f1 = 0.0;
  double part_acc = 0.0;
  double part_f1 = 0.0;
};

// mIoU over parts 1..6 present in either map (1 when none is); part_f1 is
// the macro F1 over labels 0..6 present in gt.
SegScores seg_scores(const LabelImage& pred, const LabelImage& gt);
double miou(const LabelImage& pred, const LabelImage& gt);

// Samples whose gt shape lies at least threshold_mm from the mean shape.
std::vector<Observation> extreme_shape_filter(const BodyModel& model, const std::vector<Observation>& samples,
                                              double threshold_mm = 22.5);
// Toy-scale replacement for the 22.5 mm rule: PVE-T of a shift of `girth`
// on coefficient 0 from the mean shape.
double calibrated_shape_threshold(const BodyModel& model, double girth = 1.5);

inline const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols = {"mpjpe_mm",       "pa_mpjpe_mm",   "pve_t_mm", "pve_t_torso_mm",
                                                "pve_t_legs_mm",  "pve_t_arms_mm", "pve_t_head_mm", "miou",
                                                "fb_acc",         "fb_f1",         "part_acc", "part_f1"};
  return cols;
}

// One row of the report; absent values (empty part groups) stay empty.
struct MetricRow {
  std::string id;
  std::vector<std::optional<double>> values;  // metric_columns() order
};

// Metrics of predicted Θ against the sample's gt; segmentation compares the
// hard render of pred with the sample's label mask.
MetricRow evaluate_sample(const BodyModel& model, const MeshParams& pred, const Observation& obs, bool root_align = true);

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricRow mean;  // mean over rows where the value is present

  std::string to_csv() const;
  std::string to_json_text() const;
  std::optional<double> mean_of(const std::string& column) const;
};

MetricReport make_report(std::vector<MetricRow> rows);

// Fixed-point rendering used in report files.
std::string format_metric(const std::optional<double>& v);

}  // namespace omrfit
