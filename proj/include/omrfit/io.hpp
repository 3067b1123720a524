#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "omrfit/body_model.hpp"
#include "omrfit/errors.hpp"
#include "omrfit/losses.hpp"
#include "omrfit/regressor.hpp"

namespace omrfit {

using json = nlohmann::json;

inline constexpr const char* kModelVersion = "omrfit-model/1";
inline constexpr const char* kCheckpointVersion = "omrfit-reg/1";
inline constexpr const char* kAnnotationVersion = "omrfit-ann/1";
inline constexpr const char* kDatasetVersion = "omrfit-ds/1";

std::string read_text(const std::filesystem::path& path);
// Writes through a temporary file and renames it into place.
void write_text(const std::filesystem::path& path, const std::string& text);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);

// Typed field access; missing or mistyped fields raise DataError naming the
// key.
template <typename T>
T get_field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(std::string("field '") + key + "' has the wrong type");
  }
}

json to_json(const BodyModel& model);
BodyModel model_from_json(const json& j);
void save_model(const std::filesystem::path& path, const BodyModel& model);
BodyModel load_model(const std::filesystem::path& path);

struct Checkpoint {
  RegressorArch arch;
  std::uint64_t seed = 0;
  Vector weights;
};

json to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const json& j);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

json to_json(const MeshParams& params);
MeshParams params_from_json(const json& j, const BodyModel& model);

json to_json(const LossTerms& terms);
LossTerms loss_terms_from_json(const json& j);

// Generated supervision for one sample.
struct Annotation {
  std::string sample_id;
  MeshParams params;
  std::string method;
  std::string schedule;
  std::uint64_t seed = 0;
  LossTerms final_losses;
};

json to_json(const Annotation& ann);
Annotation annotation_from_json(const json& j, const BodyModel& model);

// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace omrfit
