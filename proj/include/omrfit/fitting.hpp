#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "omrfit/body_model.hpp"
#include "omrfit/io.hpp"
#include "omrfit/losses.hpp"
#include "omrfit/observation.hpp"
#include "omrfit/regressor.hpp"

namespace omrfit {

enum class PhaseKind { P0, P, Q };

// "aPbQ": P0 followed by strictly alternating Q and P phases, a P-phases
// and b Q-phases in total, a in {b, b+1}.
struct Schedule {
  int n_p = 1;
  int n_q = 1;
  std::vector<PhaseKind> phases;

  std::string text() const { return std::to_string(n_p) + "P" + std::to_string(n_q) + "Q"; }
};

Schedule parse_schedule(std::string_view text);
const char* phase_name(PhaseKind kind);

enum class FitMethod { smplify, eft, omr };
const char* method_name(FitMethod m);
FitMethod parse_method(std::string_view text);

struct FitConfig {
  FitMethod method = FitMethod::omr;
  Schedule schedule = parse_schedule("5P4Q");
  // Iterations per phase for omr; total iterations for smplify and eft.
  int iters = 20;
  double lr_q = 1e-3;
  double lr_p = 1e-6;
  LossConfig loss;
  std::uint64_t seed = 0;
  bool freeze_cam = false;
  bool p_restart = false;

  void validate() const;
};

json to_json(const FitConfig& config);
// Overlays the keys of j (the to_json layout, every key optional) onto base.
// Unknown keys raise ConfigError.
FitConfig apply_fit_json(FitConfig base, const json& j);
// Hash of the canonical JSON form.
std::string config_hash(const FitConfig& config);

struct PhaseTrace {
  PhaseKind kind = PhaseKind::Q;
  std::vector<double> losses;  // objective before each step
  double final_loss = 0.0;     // objective after the last step
  bool non_monotone = false;   // final_loss > losses[0] + 1e-6
};

struct FitResult {
  MeshParams params;
  std::vector<PhaseTrace> phases;
  // λ-weighted Q-objective terms (priors, and L_shape when enabled) at the
  // final Θ, comparable across methods.
  LossTerms final_terms;
  bool no_visible = false;
  double wall_time_s = 0.0;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string model_name;
};

// Adam on Θ from init against the Q-objective; α is not involved.
FitResult fit_smplify(const BodyModel& model, const Observation& obs, const MeshParams& init, const PosePrior& prior,
                      const FitConfig& config);

// Adam on a copy of α against the 2D objective (plus L_shape when
// λ_shape > 0); Θ = Φ_α*(features).
FitResult fit_eft(const BodyModel& model, const Regressor& reg, const Vector& alpha_pre, const Observation& obs,
                  const PosePrior& prior, const FitConfig& config);

// Alternating P/Q optimization following config.schedule.
FitResult fit_omr(const BodyModel& model, const Regressor& reg, const Vector& alpha_pre, const Observation& obs,
                  const PosePrior& prior, const FitConfig& config);

// Dispatch on config.method; smplify starts from Φ's prediction.
FitResult fit_sample(const BodyModel& model, const Regressor& reg, const Vector& alpha_pre, const Observation& obs,
                     const PosePrior& prior, const FitConfig& config);

json to_json(const FitResult& result, const std::string& sample_id, const FitConfig& config);
Annotation to_annotation(const FitResult& result, const std::string& sample_id, const FitConfig& config);

struct SampleFailure {
  std::string sample_id;
  std::string reason;
};

struct FitBatch {
  std::vector<std::string> ids;  // sorted
  std::vector<FitResult> results;
  std::vector<SampleFailure> failures;
};

// Fits every sample in a worker pool; results are ordered by sample id.
// Samples without visible keypoints and numerical failures are recorded in
// failures and produce no result.
FitBatch fit_dataset(const BodyModel& model, const Regressor& reg, const Vector& alpha_pre,
                     const std::vector<Observation>& samples, const PosePrior& prior, const FitConfig& config,
                     int threads = 0);

struct AnnotationSummary {
  int requested = 0;
  int annotated = 0;
  std::vector<SampleFailure> failures;
  LossTerms mean_final;
};

// OMR per sample (ground truth is ignored), one <id>.json per success plus
// summary.json in out_dir.
AnnotationSummary annotate_dataset(const BodyModel& model, const Regressor& reg, const Vector& alpha_pre,
                                   const std::vector<Observation>& samples, const PosePrior& prior,
                                   const FitConfig& config, const std::filesystem::path& out_dir, int threads = 0);

// Writes <id>.json for every result and summary.json.
void save_fit_batch(const FitBatch& batch, const FitConfig& config, const std::filesystem::path& out_dir);

}  // namespace omrfit
