#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omrfit/body_model.hpp"
#include "omrfit/observation.hpp"
#include "omrfit/types.hpp"

namespace omrfit {

inline constexpr int kFeatureMaskSize = 16;

// Keypoints (zero-filled where invisible), visibility bits, and the 6-part
// union mask block-averaged to 16x16.
Vector featurize(const Observation& obs, int mask_size = kFeatureMaskSize);
int feature_size(int n_keypoints, int mask_size = kFeatureMaskSize);

struct RegressorArch {
  int input_dim = 0;
  int hidden = 128;
  int layers = 2;
  int n_shape = 10;
  int n_joints = 16;

  int output_dim() const { return n_shape + 3 * n_joints + 3; }
  bool operator==(const RegressorArch&) const = default;
};

// Fully connected tanh network Φ_α: features -> Θ. α packs, layer by layer,
// the row-major weight matrix followed by the bias. The scale output is
// softplus(raw) + 1e-3.
class Regressor {
 public:
  explicit Regressor(RegressorArch arch);
  static Regressor for_model(const BodyModel& model, int hidden = 128, int layers = 2);

  const RegressorArch& arch() const { return arch_; }
  int param_count() const { return param_count_; }

  // Xavier-uniform weights, zero biases, scale bias at s ~ 0.85.
  Vector init(std::uint64_t seed) const;

  struct Cache {
    std::vector<Vector> activations;  // input, hidden outputs
    Vector raw;
  };

  // Flat Θ in MeshParams layout.
  Vector predict_flat(const Vector& alpha, const Vector& features, Cache* cache = nullptr) const;
  MeshParams predict(const BodyModel& model, const Vector& alpha, const Vector& features) const;

  // Accumulates dL/dα given dL/dΘ (flat MeshParams layout).
  void backward(const Vector& alpha, const Cache& cache, const Vector& grad_theta, Vector& grad_alpha) const;

 private:
  struct Layer {
    int in, out, w_offset, b_offset;
  };
  RegressorArch arch_;
  std::vector<Layer> layers_;
  int param_count_ = 0;
  int scale_index_ = 0;
};

struct TrainSample {
  Vector features;
  Vector target;  // flat Θ
  std::string id;
};

struct TrainConfig {
  int epochs = 50;
  double lr = 1e-3;
  int batch_size = 16;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Vector alpha;
  std::vector<double> epoch_loss;  // mean ||Φ(x) - Θ||^2 over each epoch's minibatches
};

// Minimizes mean ||Φ(features) - target||^2 by minibatch Adam. Samples are
// ordered by id before the seeded shuffle, so input order does not matter.
TrainResult train_regressor(const Regressor& reg, const Vector& alpha0, std::vector<TrainSample> data,
                            const TrainConfig& config);

// Supervision from each observation's gt Θ.
TrainResult pretrain(const Regressor& reg, const Vector& alpha0, const std::vector<Observation>& data,
                     const TrainConfig& config);

// Supervision from the generated annotations; observations without one are
// skipped. mix adds samples supervised by their gt Θ.
TrainResult retrain(const Regressor& reg, const Vector& alpha, const std::vector<Observation>& annotated,
                    const TrainConfig& config, const std::vector<Observation>& mix = {});

}  // namespace omrfit
