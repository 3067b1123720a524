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
#include "omrfit/rng.hpp"

namespace omrfit {

enum class Distribution { normal, obese };
const char* distribution_name(Distribution d);
Distribution parse_distribution(std::string_view text);

// Shift of the girth coefficient for the obese distribution.
inline constexpr double kObeseShift = 3.0;

struct SynthConfig {
  int n = 100;
  Distribution distribution = Distribution::normal;
  double noise = 0.01;
  std::uint64_t seed = 0;
  int resolution = 64;
  std::string split = "train";
  std::string prefix = "s";
};

// Uniform per-axis ranges: +-0.3 rad for the root, torso and head joints,
// +-0.6 rad for limb joints.
Vector sample_pose(const BodyModel& model, Rng& rng);
Vector sample_shape(const BodyModel& model, Distribution dist, Rng& rng);
MeshParams sample_params(const BodyModel& model, Distribution dist, Rng& rng);

// Hard part labels of the posed, projected mesh. The camera looks down -z,
// so larger z is nearer.
LabelImage render_labels(const BodyModel& model, const MeshParams& params, int resolution);

// Keypoints = projected joints + N(0, noise^2) per coordinate; keypoints
// leaving [-1, 1]^2 are marked invisible.
Observation make_observation(const BodyModel& model, const MeshParams& params, const std::string& id, double noise,
                             Rng& rng, int resolution);

struct Dataset {
  SynthConfig config;
  std::string model_name;
  std::vector<Observation> samples;  // sorted by id
};

Dataset synth_dataset(const BodyModel& model, const SynthConfig& config, int threads = 0);

// Directory layout: manifest.json, model.json, samples/<id>.json,
// masks/<id>_labels.pgm.
void save_dataset(const std::filesystem::path& dir, const BodyModel& model, const Dataset& data);

struct LoadedDataset {
  BodyModel model;
  Dataset data;
};

// Verifies every sample against the manifest hashes.
LoadedDataset load_dataset(const std::filesystem::path& dir);

std::string sample_hash(const std::string& sample_json, const std::string& mask_bytes);

json sample_to_json(const Observation& obs);
Observation sample_from_json(const json& j, const BodyModel& model);

// Every <id>.json except summary.json, sorted by id.
std::vector<Annotation> load_annotations(const std::filesystem::path& dir, const BodyModel& model);
void save_annotations(const std::filesystem::path& dir, const std::vector<Annotation>& annotations);

// Attaches each annotation to the sample with the same id. Unknown ids raise
// DataError, as does replacing an existing annotation unless force is set.
void merge_annotations(Dataset& data, const std::vector<Annotation>& annotations, bool force = false);

// Whitening prior fitted on draws from sample_pose.
PosePrior default_pose_prior(const BodyModel& model, std::uint64_t seed = 0, int draws = 5000, int latent_dim = 12);

}  // namespace omrfit
