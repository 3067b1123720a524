#include "omrfit/regressor.hpp"

#include <algorithm>
#include <cmath>

#include "omrfit/diffengine.hpp"
#include "omrfit/errors.hpp"
#include "omrfit/rng.hpp"

namespace omrfit {

int feature_size(int n_keypoints, int mask_size) { return 3 * n_keypoints + mask_size * mask_size; }

Vector featurize(const Observation& obs, int mask_size) {
  const int r = static_cast<int>(obs.keypoints.rows());
  require_dims(static_cast<int>(obs.visible.size()) == r, "visibility length != keypoint count");
  Vector f = Vector::Zero(feature_size(r, mask_size));
  for (int i = 0; i < r; ++i) {
    if (!obs.visible[i]) continue;
    f(2 * i) = obs.keypoints(i, 0);
    f(2 * i + 1) = obs.keypoints(i, 1);
    f(2 * r + i) = 1.0;
  }
  const LabelImage& lab = obs.labels;
  if (lab.width > 0 && lab.height > 0) {
    std::vector<double> sum(static_cast<std::size_t>(mask_size) * mask_size, 0.0);
    std::vector<int> count(sum.size(), 0);
    for (int row = 0; row < lab.height; ++row) {
      const int cr = row * mask_size / lab.height;
      for (int col = 0; col < lab.width; ++col) {
        const std::size_t cell = static_cast<std::size_t>(cr) * mask_size + col * mask_size / lab.width;
        sum[cell] += lab.at(row, col) > 0 ? 1.0 : 0.0;
        ++count[cell];
      }
    }
    for (std::size_t c = 0; c < sum.size(); ++c) f(3 * r + static_cast<Eigen::Index>(c)) = count[c] ? sum[c] / count[c] : 0.0;
  }
  return f;
}

Regressor::Regressor(RegressorArch arch) : arch_(arch) {
  if (arch_.input_dim <= 0 || arch_.hidden <= 0 || arch_.layers < 1) throw ConfigError("invalid regressor architecture");
  int in = arch_.input_dim;
  int offset = 0;
  for (int l = 0; l <= arch_.layers; ++l) {
    const int out = l == arch_.layers ? arch_.output_dim() : arch_.hidden;
    layers_.push_back({in, out, offset, offset + in * out});
    offset += in * out + out;
    in = out;
  }
  param_count_ = offset;
  scale_index_ = arch_.n_shape + 3 * arch_.n_joints;
}

Regressor Regressor::for_model(const BodyModel& model, int hidden, int layers) {
  RegressorArch a;
  a.input_dim = feature_size(model.n_joints);
  a.hidden = hidden;
  a.layers = layers;
  a.n_shape = model.n_shape;
  a.n_joints = model.n_joints;
  return Regressor(a);
}

Vector Regressor::init(std::uint64_t seed) const {
  Rng rng(seed, 0xa1fa);
  Vector alpha = Vector::Zero(param_count_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    double bound = std::sqrt(6.0 / (L.in + L.out));
    if (l + 1 == layers_.size()) bound *= 0.1;
    for (int i = 0; i < L.in * L.out; ++i) alpha(L.w_offset + i) = rng.uniform(-bound, bound);
  }
  // softplus(b) + 1e-3 = 0.85
  alpha(layers_.back().b_offset + scale_index_) = std::log(std::expm1(0.85 - 1e-3));
  return alpha;
}

Vector Regressor::predict_flat(const Vector& alpha, const Vector& features, Cache* cache) const {
  require_dims(alpha.size() == param_count_, "regressor parameter length mismatch");
  require_dims(features.size() == arch_.input_dim, "feature length " + std::to_string(features.size()) +
                                                       " != regressor input " + std::to_string(arch_.input_dim));
  Vector h = features;
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(h);
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    const Eigen::Map<const RowMatrix> w(alpha.data() + L.w_offset, L.out, L.in);
    Vector a = w * h + alpha.segment(L.b_offset, L.out);
    if (l + 1 < layers_.size()) {
      h = a.array().tanh().matrix();
      if (cache) cache->activations.push_back(h);
    } else {
      h = std::move(a);
    }
  }
  if (cache) cache->raw = h;
  const double raw_s = h(scale_index_);
  h(scale_index_) = (raw_s > 0.0 ? raw_s + std::log1p(std::exp(-raw_s)) : std::log1p(std::exp(raw_s))) + 1e-3;
  return h;
}

MeshParams Regressor::predict(const BodyModel& model, const Vector& alpha, const Vector& features) const {
  require_dims(arch_.n_shape == model.n_shape && arch_.n_joints == model.n_joints, "regressor does not match model");
  return MeshParams::unflatten(model, predict_flat(alpha, features));
}

void Regressor::backward(const Vector& alpha, const Cache& cache, const Vector& grad_theta, Vector& grad_alpha) const {
  require_dims(grad_theta.size() == arch_.output_dim(), "regressor output gradient length mismatch");
  require_dims(grad_alpha.size() == param_count_, "regressor gradient buffer length mismatch");
  Vector g = grad_theta;
  const double raw_s = cache.raw(scale_index_);
  g(scale_index_) *= raw_s >= 0.0 ? 1.0 / (1.0 + std::exp(-raw_s)) : std::exp(raw_s) / (1.0 + std::exp(raw_s));
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    const auto& L = layers_[l];
    const Vector& input = cache.activations[l];
    Eigen::Map<RowMatrix> gw(grad_alpha.data() + L.w_offset, L.out, L.in);
    gw.noalias() += g * input.transpose();
    grad_alpha.segment(L.b_offset, L.out) += g;
    if (l == 0) break;
    const Eigen::Map<const RowMatrix> w(alpha.data() + L.w_offset, L.out, L.in);
    Vector gh = w.transpose() * g;
    g = (gh.array() * (1.0 - input.array().square())).matrix();
  }
}

TrainResult train_regressor(const Regressor& reg, const Vector& alpha0, std::vector<TrainSample> data,
                            const TrainConfig& config) {
  if (data.empty()) throw DataError("training set is empty");
  if (config.epochs < 0 || config.batch_size < 1 || !(config.lr > 0.0)) throw ConfigError("invalid training config");
  std::stable_sort(data.begin(), data.end(), [](const TrainSample& a, const TrainSample& b) { return a.id < b.id; });
  TrainResult out;
  out.alpha = alpha0;
  AdamState adam = AdamState::create(reg.param_count(), config.lr);
  Rng rng(config.seed, 0x7a1);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Vector grad(reg.param_count());
  Regressor::Cache cache;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double epoch_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      grad.setZero();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const TrainSample& s = data[order[k]];
        const Vector pred = reg.predict_flat(out.alpha, s.features, &cache);
        const Vector diff = pred - s.target;
        batch_loss += diff.squaredNorm() * inv;
        reg.backward(out.alpha, cache, 2.0 * inv * diff, grad);
      }
      check_finite(batch_loss, "regressor training loss");
      adam_step(adam, out.alpha, grad);
      epoch_sum += batch_loss;
      ++batches;
    }
    out.epoch_loss.push_back(epoch_sum / static_cast<double>(batches));
  }
  return out;
}

namespace {
TrainSample make_sample(const Observation& obs, const MeshParams& target) {
  return {featurize(obs), target.flatten(), obs.sample_id};
}
}  // namespace

TrainResult pretrain(const Regressor& reg, const Vector& alpha0, const std::vector<Observation>& data,
                     const TrainConfig& config) {
  std::vector<TrainSample> samples;
  for (const auto& obs : data) {
    if (!obs.gt) throw DataError("pretraining sample " + obs.sample_id + " has no ground-truth parameters");
    samples.push_back(make_sample(obs, *obs.gt));
  }
  return train_regressor(reg, alpha0, std::move(samples), config);
}

TrainResult retrain(const Regressor& reg, const Vector& alpha, const std::vector<Observation>& annotated,
                    const TrainConfig& config, const std::vector<Observation>& mix) {
  std::vector<TrainSample> samples;
  for (const auto& obs : annotated)
    if (obs.annotation) samples.push_back(make_sample(obs, *obs.annotation));
  for (const auto& obs : mix) {
    if (!obs.gt) throw DataError("mixed-in sample " + obs.sample_id + " has no ground-truth parameters");
    samples.push_back(make_sample(obs, *obs.gt));
  }
  return train_regressor(reg, alpha, std::move(samples), config);
}

}  // namespace omrfit
