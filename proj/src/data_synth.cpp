#include "omrfit/data_synth.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "omrfit/camera.hpp"
#include "omrfit/errors.hpp"
#include "omrfit/parallel.hpp"
#include "omrfit/renderer.hpp"

namespace omrfit {

namespace fs = std::filesystem;

const char* distribution_name(Distribution d) { return d == Distribution::normal ? "normal" : "obese"; }

Distribution parse_distribution(std::string_view text) {
  if (text == "normal") return Distribution::normal;
  if (text == "obese") return Distribution::obese;
  throw ConfigError("unknown distribution '" + std::string(text) + "' (expected normal or obese)");
}

Vector sample_pose(const BodyModel& model, Rng& rng) {
  const std::vector<int> parts = joint_part_table(model);
  Vector theta(model.theta_size());
  for (int k = 0; k < model.n_joints; ++k) {
    const auto part = static_cast<BodyPart>(parts[k]);
    const bool core = k == 0 || part == BodyPart::torso || part == BodyPart::head;
    const double range = core ? 0.3 : 0.6;
    for (int c = 0; c < 3; ++c) theta(3 * k + c) = rng.uniform(-range, range);
  }
  return theta;
}

Vector sample_shape(const BodyModel& model, Distribution dist, Rng& rng) {
  Vector beta(model.n_shape);
  for (int j = 0; j < model.n_shape; ++j) {
    double b = rng.normal();
    while (std::abs(b) > 2.5) b = rng.normal();
    beta(j) = b;
  }
  if (dist == Distribution::obese && model.n_shape > 0) beta(0) += kObeseShift;
  return beta;
}

MeshParams sample_params(const BodyModel& model, Distribution dist, Rng& rng) {
  MeshParams p;
  p.beta = sample_shape(model, dist, rng);
  p.theta = sample_pose(model, rng);
  p.scale = rng.uniform(0.6, 1.1);
  p.trans.x() = rng.uniform(-0.2, 0.2);
  p.trans.y() = rng.uniform(-0.2, 0.2);
  return p;
}

LabelImage render_labels(const BodyModel& model, const MeshParams& params, int resolution) {
  const BodyOutput body = forward(model, params);
  const Points2 v2 = project(body.vertices, {params.scale, params.trans});
  const Vector depth = -body.vertices.col(2);
  return rasterize_labels(v2, std::span<const double>(depth.data(), depth.size()), model.faces, model.face_part,
                          resolution, resolution);
}

Observation make_observation(const BodyModel& model, const MeshParams& params, const std::string& id, double noise,
                             Rng& rng, int resolution) {
  if (!(noise >= 0.0)) throw ConfigError("keypoint noise must be >= 0");
  const BodyOutput body = forward(model, params);
  Observation obs;
  obs.sample_id = id;
  obs.noise = noise;
  obs.gt = params;
  obs.keypoints = project(body.joints, {params.scale, params.trans});
  obs.visible.assign(model.n_joints, 1);
  for (int k = 0; k < model.n_joints; ++k) {
    if (noise > 0.0) {
      obs.keypoints(k, 0) += noise * rng.normal();
      obs.keypoints(k, 1) += noise * rng.normal();
    }
    if (std::abs(obs.keypoints(k, 0)) > 1.0 || std::abs(obs.keypoints(k, 1)) > 1.0) obs.visible[k] = 0;
  }
  obs.labels = render_labels(model, params, resolution);
  return obs;
}

namespace {

std::string sample_id(const std::string& prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d", i);
  return prefix + buf;
}

json manifest_json(const Dataset& data, const std::vector<std::string>& hashes, const std::string& model_hash) {
  json samples = json::array();
  json h = json::object();
  std::string all;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    samples.push_back(data.samples[i].sample_id);
    h[data.samples[i].sample_id] = hashes[i];
    all += data.samples[i].sample_id + ":" + hashes[i] + "\n";
  }
  const SynthConfig& c = data.config;
  return {{"version", kDatasetVersion},
          {"model", "model.json"},
          {"model_name", data.model_name},
          {"model_hash", model_hash},
          {"samples", samples},
          {"split", c.split},
          {"distribution", distribution_name(c.distribution)},
          {"seed", c.seed},
          {"noise", c.noise},
          {"resolution", c.resolution},
          {"hashes", h},
          {"dataset_hash", fnv1a_hex(all)}};
}

}  // namespace

Dataset synth_dataset(const BodyModel& model, const SynthConfig& config, int threads) {
  if (config.n < 1) throw ConfigError("dataset size must be >= 1");
  if (config.resolution < 8) throw ConfigError("mask resolution must be >= 8");
  if (!(config.noise >= 0.0)) throw ConfigError("keypoint noise must be >= 0");
  Dataset data;
  data.config = config;
  data.model_name = model.name;
  data.samples.resize(config.n);
  parallel_for(
      static_cast<std::size_t>(config.n),
      [&](std::size_t i) {
        // Independent stream per sample so generation order is irrelevant.
        Rng rng(config.seed, 0x5a3d0000ull + i);
        const MeshParams params = sample_params(model, config.distribution, rng);
        data.samples[i] =
            make_observation(model, params, sample_id(config.prefix, static_cast<int>(i)), config.noise, rng,
                             config.resolution);
      },
      threads);
  return data;
}

json sample_to_json(const Observation& obs) {
  std::vector<double> kp(obs.keypoints.data(), obs.keypoints.data() + obs.keypoints.size());
  std::vector<int> vis(obs.visible.begin(), obs.visible.end());
  json j = {{"sample_id", obs.sample_id}, {"keypoints", kp}, {"visible", vis}, {"noise", obs.noise}};
  if (obs.gt) j["gt"] = to_json(*obs.gt);
  if (obs.annotation) j["annotation"] = to_json(*obs.annotation);
  return j;
}

Observation sample_from_json(const json& j, const BodyModel& model) {
  Observation obs;
  obs.sample_id = get_field<std::string>(j, "sample_id");
  const auto kp = get_field<std::vector<double>>(j, "keypoints");
  const auto vis = get_field<std::vector<int>>(j, "visible");
  if (kp.size() != 2 * static_cast<std::size_t>(model.n_joints) || vis.size() != static_cast<std::size_t>(model.n_joints))
    throw DimensionError("sample " + obs.sample_id + " keypoints do not match the model joints");
  obs.keypoints = Eigen::Map<const Points2>(kp.data(), model.n_joints, 2);
  for (int v : vis) obs.visible.push_back(v ? 1 : 0);
  obs.noise = get_field<double>(j, "noise");
  if (j.contains("gt")) obs.gt = params_from_json(j.at("gt"), model);
  if (j.contains("annotation")) obs.annotation = params_from_json(j.at("annotation"), model);
  return obs;
}

std::string sample_hash(const std::string& sample_json, const std::string& mask_bytes) {
  return fnv1a_hex(sample_json + '\0' + mask_bytes);
}

void save_dataset(const fs::path& dir, const BodyModel& model, const Dataset& data) {
  std::error_code ec;
  fs::create_directories(dir / "samples", ec);
  fs::create_directories(dir / "masks", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  std::vector<std::string> hashes;
  for (const auto& obs : data.samples) {
    const std::string text = sample_to_json(obs).dump(1) + "\n";
    const std::string mask = encode_label_pgm(obs.labels);
    write_text(dir / "samples" / (obs.sample_id + ".json"), text);
    write_text(dir / "masks" / label_pgm_name(obs.sample_id), mask);
    hashes.push_back(sample_hash(text, mask));
  }
  const std::string model_text = to_json(model).dump(1) + "\n";
  write_text(dir / "model.json", model_text);
  write_json(dir / "manifest.json", manifest_json(data, hashes, fnv1a_hex(model_text)));
}

LoadedDataset load_dataset(const fs::path& dir) {
  const json m = read_json(dir / "manifest.json");
  const auto version = get_field<std::string>(m, "version");
  if (version != kDatasetVersion) throw DataError("unsupported dataset version '" + version + "'");
  LoadedDataset out;
  const std::string model_text = read_text(dir / get_field<std::string>(m, "model"));
  if (fnv1a_hex(model_text) != get_field<std::string>(m, "model_hash"))
    throw DataError(dir.string() + ": model file does not match the manifest hash");
  try {
    out.model = model_from_json(json::parse(model_text));
  } catch (const json::parse_error& e) {
    throw FormatError("model.json: " + std::string(e.what()), e.byte);
  }
  Dataset& d = out.data;
  d.model_name = out.model.name;
  d.config.split = get_field<std::string>(m, "split");
  d.config.distribution = parse_distribution(get_field<std::string>(m, "distribution"));
  d.config.seed = get_field<std::uint64_t>(m, "seed");
  d.config.noise = get_field<double>(m, "noise");
  d.config.resolution = get_field<int>(m, "resolution");
  const auto ids = get_field<std::vector<std::string>>(m, "samples");
  const json hashes = get_field<json>(m, "hashes");
  d.config.n = static_cast<int>(ids.size());
  for (const auto& id : ids) {
    const std::string text = read_text(dir / "samples" / (id + ".json"));
    const std::string mask = read_text(dir / "masks" / label_pgm_name(id));
    if (!hashes.contains(id) || hashes.at(id).get<std::string>() != sample_hash(text, mask))
      throw DataError(dir.string() + ": sample " + id + " does not match the manifest hash");
    json sj;
    try {
      sj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw FormatError("sample " + id + ": " + e.what(), e.byte);
    }
    Observation obs = sample_from_json(sj, out.model);
    if (obs.sample_id != id) throw DataError("sample file " + id + ".json carries id " + obs.sample_id);
    obs.labels = decode_label_pgm(mask);
    if (obs.labels.width != d.config.resolution || obs.labels.height != d.config.resolution)
      throw DimensionError("mask of sample " + id + " does not match the dataset resolution");
    d.samples.push_back(std::move(obs));
  }
  std::sort(d.samples.begin(), d.samples.end(),
            [](const Observation& a, const Observation& b) { return a.sample_id < b.sample_id; });
  return out;
}

std::vector<Annotation> load_annotations(const fs::path& dir, const BodyModel& model) {
  if (!fs::is_directory(dir)) throw IoError("annotation directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json" && e.path().filename() != "summary.json")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Annotation> out;
  for (const auto& f : files) {
    try {
      out.push_back(annotation_from_json(read_json(f), model));
    } catch (const FormatError&) {
      throw;
    } catch (const DataError& e) {
      throw DataError(f.string() + ": " + e.what());
    }
  }
  return out;
}

void save_annotations(const fs::path& dir, const std::vector<Annotation>& annotations) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& a : annotations) write_json(dir / (a.sample_id + ".json"), to_json(a));
}

void merge_annotations(Dataset& data, const std::vector<Annotation>& annotations, bool force) {
  std::set<std::string> seen;
  for (const auto& a : annotations) {
    if (!seen.insert(a.sample_id).second) throw DataError("duplicate annotation for sample " + a.sample_id);
    auto it = std::find_if(data.samples.begin(), data.samples.end(),
                           [&](const Observation& o) { return o.sample_id == a.sample_id; });
    if (it == data.samples.end()) throw DataError("annotation for unknown sample " + a.sample_id);
    if (it->annotation && !force)
      throw DataError("sample " + a.sample_id + " already carries an annotation (use force to replace)");
  }
  for (const auto& a : annotations) {
    auto it = std::find_if(data.samples.begin(), data.samples.end(),
                           [&](const Observation& o) { return o.sample_id == a.sample_id; });
    it->annotation = a.params;
  }
}

PosePrior default_pose_prior(const BodyModel& model, std::uint64_t seed, int draws, int latent_dim) {
  Rng rng(seed, 0x9053);
  std::vector<Vector> samples;
  samples.reserve(draws);
  for (int i = 0; i < draws; ++i) samples.push_back(sample_pose(model, rng));
  return PosePrior::fit(samples, std::min(latent_dim, model.theta_size()));
}

}  // namespace omrfit
