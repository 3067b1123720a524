#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "omrfit/body_model.hpp"
#include "omrfit/observation.hpp"
#include "omrfit/regressor.hpp"
#include "omrfit/renderer.hpp"
#include "omrfit/types.hpp"

namespace omrfit {

struct LossWeights {
  double l2d = 1.0;
  double theta = 1e-2;
  double beta = 1e-3;
  double shape = 1.0;  // 0 disables every L_shape term
  double anchor = 1.0;

  void validate() const;
};

// Residual granularity of the robust keypoint term.
enum class GmMode { keypoint, coord };

struct LossConfig {
  LossWeights weights;
  double sigma = 0.78;
  GmMode gm_per = GmMode::keypoint;
  // Soft render used by L_shape.
  RenderConfig render = {.resolution = 64, .gamma = 1e5};

  void validate() const;
};

double geman_mcclure(double e, double sigma);
// d/de of geman_mcclure.
double geman_mcclure_derivative(double e, double sigma);

struct ReprojectionResult {
  double value = 0.0;
  bool no_visible = false;
};

// Mean over visible keypoints of the Geman-McClure penalty. With
// GmMode::keypoint the residual is the Euclidean distance; with
// GmMode::coord both coordinate residuals are penalized and summed.
// grad (optional) receives dL/dpred.
ReprojectionResult reprojection_loss(const Points2& pred, const Points2& gt, std::span<const std::uint8_t> visible,
                                     double sigma, GmMode mode = GmMode::keypoint, Points2* grad = nullptr);

// Z(θ) = A (θ - μ).
struct PosePrior {
  Vector mean;
  RowMatrix whitening;  // m x 3K

  int latent_dim() const { return static_cast<int>(whitening.rows()); }
  static PosePrior identity(int size);
  // PCA whitening on the leading latent_dim principal directions.
  static PosePrior fit(const std::vector<Vector>& samples, int latent_dim = 12);
};

double pose_prior_loss(const Eigen::Ref<const Vector>& theta, const PosePrior& prior, Vector* grad = nullptr);

// Sum over the six parts of 1 - soft IoU. A part empty in both maps adds 0.
double shape_loss(const PartMaskStack& pred, const PartMaskStack& gt, PartMaskStack* grad = nullptr);

double anchor_loss(const MeshParams& params, const MeshParams& anchor);

struct LossTerms {
  double l2d = 0.0;
  double theta = 0.0;
  double beta = 0.0;
  double shape = 0.0;
  double anchor = 0.0;
  double total = 0.0;
  bool no_visible = false;
};

// Which terms of the weighted sum to include on top of the 2D term.
struct TermSet {
  bool priors = false;
  bool shape = false;
  const Vector* anchor = nullptr;  // flat Θ
};

// Mesh-side objective on a flat Θ (MeshParams layout): forward, project,
// optional soft render. Holds the observation's target masks so repeated
// evaluations do not rebuild them.
class MeshObjective {
 public:
  MeshObjective(const BodyModel& model, const Observation& obs, const PosePrior* prior, LossConfig config);

  double evaluate(const Vector& flat, const TermSet& terms, Vector* grad = nullptr, LossTerms* parts = nullptr) const;

  const BodyModel& model() const { return model_; }
  const Observation& observation() const { return obs_; }
  const LossConfig& config() const { return config_; }

 private:
  const BodyModel& model_;
  const Observation& obs_;
  const PosePrior* prior_;
  LossConfig config_;
  PartMaskStack target_;
};

// λ_2d L_2D + λ_θ L_θ + λ_β ||β||^2 + λ_shape L_shape.
double q_objective(const BodyModel& model, const MeshParams& params, const Observation& obs, const PosePrior& prior,
                   const LossConfig& config, LossTerms* parts = nullptr);

// Objective on α: Θ = Φ_α(features), then λ_2d L_2D, plus λ_anchor anchor
// and λ_shape L_shape when an anchor is given. use_shape adds L_shape in the
// anchor-free form as well.
class RegressorObjective {
 public:
  RegressorObjective(const Regressor& reg, const MeshObjective& mesh, std::optional<Vector> anchor = std::nullopt,
                     bool use_shape = false);

  double evaluate(const Vector& alpha, Vector* grad = nullptr, LossTerms* parts = nullptr) const;

 private:
  const Regressor& reg_;
  const MeshObjective& mesh_;
  Vector features_;
  std::optional<Vector> anchor_;
  TermSet terms_;
};

double p_objective(const BodyModel& model, const Regressor& reg, const Vector& alpha, const Observation& obs,
                   const std::optional<MeshParams>& anchor, const LossConfig& config, LossTerms* parts = nullptr);

}  // namespace omrfit
