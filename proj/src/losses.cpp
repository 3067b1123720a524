#include "omrfit/losses.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "omrfit/camera.hpp"
#include "omrfit/diffengine.hpp"
#include "omrfit/errors.hpp"

namespace omrfit {

void LossWeights::validate() const {
  for (double w : {l2d, theta, beta, shape, anchor})
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
}

void LossConfig::validate() const {
  weights.validate();
  if (!(sigma > 0.0)) throw ConfigError("Geman-McClure sigma must be > 0");
  render.validate();
}

double geman_mcclure(double e, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("Geman-McClure sigma must be > 0");
  const double s2 = sigma * sigma;
  const double e2 = e * e;
  return s2 * e2 / (s2 + e2);
}

double geman_mcclure_derivative(double e, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("Geman-McClure sigma must be > 0");
  const double s2 = sigma * sigma;
  const double d = s2 + e * e;
  return 2.0 * e * s2 * s2 / (d * d);
}

ReprojectionResult reprojection_loss(const Points2& pred, const Points2& gt, std::span<const std::uint8_t> visible,
                                     double sigma, GmMode mode, Points2* grad) {
  require_dims(pred.rows() == gt.rows() && static_cast<Eigen::Index>(visible.size()) == gt.rows(),
               "keypoint arrays disagree in length");
  if (!(sigma > 0.0)) throw ConfigError("Geman-McClure sigma must be > 0");
  if (grad) *grad = Points2::Zero(pred.rows(), 2);
  int n_vis = 0;
  for (auto v : visible) n_vis += v ? 1 : 0;
  ReprojectionResult out;
  if (n_vis == 0) {
    out.no_visible = true;
    return out;
  }
  const double s2 = sigma * sigma;
  const double inv = 1.0 / n_vis;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    if (!visible[i]) continue;
    const Eigen::RowVector2d r = pred.row(i) - gt.row(i);
    if (mode == GmMode::keypoint) {
      const double e2 = r.squaredNorm();
      const double d = s2 + e2;
      out.value += s2 * e2 / d * inv;
      if (grad) grad->row(i) = (2.0 * s2 * s2 / (d * d) * inv) * r;
    } else {
      for (int c = 0; c < 2; ++c) {
        out.value += geman_mcclure(r(c), sigma) * inv;
        if (grad) (*grad)(i, c) = geman_mcclure_derivative(r(c), sigma) * inv;
      }
    }
  }
  return out;
}

PosePrior PosePrior::identity(int size) {
  PosePrior p;
  p.mean = Vector::Zero(size);
  p.whitening = RowMatrix::Identity(size, size);
  return p;
}

PosePrior PosePrior::fit(const std::vector<Vector>& samples, int latent_dim) {
  if (samples.size() < 2) throw DataError("pose prior needs at least two samples");
  const Eigen::Index d = samples.front().size();
  if (latent_dim < 1 || latent_dim > d) throw ConfigError("pose prior latent dimension out of range");
  PosePrior p;
  p.mean = Vector::Zero(d);
  for (const auto& s : samples) {
    require_dims(s.size() == d, "pose samples disagree in length");
    p.mean += s;
  }
  p.mean /= static_cast<double>(samples.size());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& s : samples) {
    const Vector c = s - p.mean;
    cov.noalias() += c * c.transpose();
  }
  cov /= static_cast<double>(samples.size() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  p.whitening.resize(latent_dim, d);
  for (int r = 0; r < latent_dim; ++r) {
    const Eigen::Index col = d - 1 - r;  // eigenvalues ascend
    const double lambda = eig.eigenvalues()(col);
    if (!(lambda > 0.0)) throw DataError("pose samples are degenerate");
    Vector u = eig.eigenvectors().col(col);
    // Sign convention: largest-magnitude entry positive.
    Eigen::Index arg;
    u.cwiseAbs().maxCoeff(&arg);
    if (u(arg) < 0.0) u = -u;
    p.whitening.row(r) = u.transpose() / std::sqrt(lambda);
  }
  return p;
}

double pose_prior_loss(const Eigen::Ref<const Vector>& theta, const PosePrior& prior, Vector* grad) {
  require_dims(theta.size() == prior.mean.size() && prior.whitening.cols() == theta.size(),
               "pose length does not match the prior");
  const Vector z = prior.whitening * (theta - prior.mean);
  if (grad) *grad = 2.0 * prior.whitening.transpose() * z;
  return z.squaredNorm();
}

double shape_loss(const PartMaskStack& pred, const PartMaskStack& gt, PartMaskStack* grad) {
  require_dims(pred.width == gt.width && pred.height == gt.height, "mask resolution mismatch");
  require_dims(pred.data.size() == gt.data.size(), "mask stack size mismatch");
  if (grad) *grad = PartMaskStack(pred.width, pred.height);
  double total = 0.0;
  for (int part = 1; part <= kNumParts; ++part) {
    const auto p = pred.channel(part);
    const auto g = gt.channel(part);
    double inter = 0.0, uni = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      inter += p[i] * g[i];
      uni += p[i] + g[i] - p[i] * g[i];
    }
    if (uni <= 0.0) continue;
    total += 1.0 - inter / uni;
    if (grad) {
      auto out = grad->channel(part);
      const double u2 = uni * uni;
      for (std::size_t i = 0; i < p.size(); ++i) out[i] = -(g[i] * uni - inter * (1.0 - g[i])) / u2;
    }
  }
  return total;
}

double anchor_loss(const MeshParams& params, const MeshParams& anchor) {
  const Vector a = params.flatten();
  const Vector b = anchor.flatten();
  require_dims(a.size() == b.size(), "anchor layout mismatch");
  return (a - b).squaredNorm();
}

MeshObjective::MeshObjective(const BodyModel& model, const Observation& obs, const PosePrior* prior, LossConfig config)
    : model_(model), obs_(obs), prior_(prior), config_(std::move(config)) {
  config_.validate();
  require_dims(obs.keypoints.rows() == model.n_joints, "observation keypoint count != model joints");
  if (obs.labels.width > 0) {
    if (obs.labels.width != obs.labels.height) throw DimensionError("label masks must be square");
    // Rendering follows the observation's mask resolution.
    config_.render.resolution = obs.labels.width;
    target_ = masks_from_labels(obs.labels);
  }
}

double MeshObjective::evaluate(const Vector& flat, const TermSet& terms, Vector* grad, LossTerms* parts) const {
  require_dims(flat.size() == MeshParams::flat_size(model_), "mesh parameter length mismatch");
  const LossWeights& w = config_.weights;
  const int nb = model_.n_shape;
  const int nt = model_.theta_size();
  const MeshParams p = MeshParams::unflatten(model_, flat);
  const CameraParams cam{p.scale, p.trans};
  const BodyEval body = body_forward(model_, p.beta, p.theta);
  check_finite(body.vertices, "body forward");

  LossTerms t;
  Points2 g_kp;
  const Points2 kp = project(body.joints, cam);
  const auto rep = reprojection_loss(kp, obs_.keypoints, obs_.visible, config_.sigma, config_.gm_per,
                                     grad ? &g_kp : nullptr);
  t.l2d = rep.value;
  t.no_visible = rep.no_visible;
  t.total = w.l2d * t.l2d;

  if (grad) grad->setZero(flat.size());
  Points3 g_joints, g_vertices;
  if (grad) {
    const CameraGrad cg = project_backward(body.joints, cam, w.l2d * g_kp);
    g_joints = cg.points;
    (*grad)(nb + nt) += cg.scale;
    grad->tail<2>() += cg.trans;
  }

  if (terms.priors) {
    if (!prior_) throw ConfigError("pose prior required for this objective");
    Vector g_theta;
    t.theta = pose_prior_loss(p.theta, *prior_, grad ? &g_theta : nullptr);
    t.beta = p.beta.squaredNorm();
    t.total += w.theta * t.theta + w.beta * t.beta;
    if (grad) {
      grad->segment(nb, nt) += w.theta * g_theta;
      grad->head(nb) += 2.0 * w.beta * p.beta;
    }
  }

  if (terms.shape && w.shape > 0.0) {
    if (target_.width == 0) throw DataError("shape loss needs label masks for sample " + obs_.sample_id);
    const Points2 v2 = project(body.vertices, cam);
    // Camera looks down -z: nearer vertices have larger z.
    const Vector depth = -body.vertices.col(2);
    const std::span<const double> dspan(depth.data(), depth.size());
    const SoftRender soft = rasterize_soft(model_, v2, dspan, config_.render);
    PartMaskStack g_mask;
    t.shape = shape_loss(soft.masks, target_, grad ? &g_mask : nullptr);
    t.total += w.shape * t.shape;
    if (grad) {
      for (double& x : g_mask.data) x *= w.shape;
      const SoftGrad sg =
          rasterize_soft_backward(v2, dspan, model_.faces, model_.face_part, config_.render, soft, g_mask);
      const CameraGrad cg = project_backward(body.vertices, cam, sg.vertices);
      g_vertices = cg.points;
      g_vertices.col(2) -= sg.depth;
      (*grad)(nb + nt) += cg.scale;
      grad->tail<2>() += cg.trans;
    }
  }

  if (terms.anchor) {
    require_dims(terms.anchor->size() == flat.size(), "anchor layout mismatch");
    const Vector d = flat - *terms.anchor;
    t.anchor = d.squaredNorm();
    t.total += w.anchor * t.anchor;
    if (grad) *grad += 2.0 * w.anchor * d;
  }

  check_finite(t.total, "mesh objective");
  if (grad) {
    body_backward(model_, body, g_vertices, g_joints, grad->head(nb), grad->segment(nb, nt));
    check_finite(*grad, "mesh objective gradient");
  }
  if (parts) *parts = t;
  return t.total;
}

double q_objective(const BodyModel& model, const MeshParams& params, const Observation& obs, const PosePrior& prior,
                   const LossConfig& config, LossTerms* parts) {
  const MeshObjective obj(model, obs, &prior, config);
  return obj.evaluate(params.flatten(), {true, true, nullptr}, nullptr, parts);
}

RegressorObjective::RegressorObjective(const Regressor& reg, const MeshObjective& mesh, std::optional<Vector> anchor,
                                       bool use_shape)
    : reg_(reg), mesh_(mesh), features_(featurize(mesh.observation())), anchor_(std::move(anchor)) {
  terms_.shape = use_shape || anchor_.has_value();
  terms_.anchor = anchor_ ? &*anchor_ : nullptr;
}

double RegressorObjective::evaluate(const Vector& alpha, Vector* grad, LossTerms* parts) const {
  Regressor::Cache cache;
  const Vector flat = reg_.predict_flat(alpha, features_, grad ? &cache : nullptr);
  Vector g_flat;
  const double value = mesh_.evaluate(flat, terms_, grad ? &g_flat : nullptr, parts);
  if (grad) {
    grad->setZero(alpha.size());
    reg_.backward(alpha, cache, g_flat, *grad);
  }
  return value;
}

double p_objective(const BodyModel& model, const Regressor& reg, const Vector& alpha, const Observation& obs,
                   const std::optional<MeshParams>& anchor, const LossConfig& config, LossTerms* parts) {
  const MeshObjective mesh(model, obs, nullptr, config);
  std::optional<Vector> a;
  if (anchor) a = anchor->flatten();
  const RegressorObjective obj(reg, mesh, std::move(a));
  return obj.evaluate(alpha, nullptr, parts);
}

}  // namespace omrfit
