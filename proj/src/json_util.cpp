#include "omrfit/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace omrfit {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path.string());
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed for " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what(), e.byte);
  }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(1) + "\n"); }

namespace {

template <typename M>
json flat_array(const M& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
  return a;
}

template <typename M>
M matrix_field(const json& j, const char* key, Eigen::Index rows, Eigen::Index cols) {
  const auto values = get_field<std::vector<typename M::Scalar>>(j, key);
  if (static_cast<Eigen::Index>(values.size()) != rows * cols)
    throw DataError(std::string("field '") + key + "' has " + std::to_string(values.size()) + " entries, expected " +
                    std::to_string(rows * cols));
  M m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = values[r * cols + c];
  return m;
}

Vector vector_field(const json& j, const char* key) {
  const auto values = get_field<std::vector<double>>(j, key);
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

void check_version(const json& j, const char* expected) {
  const auto v = get_field<std::string>(j, "version");
  if (v != expected) throw DataError("unsupported version '" + v + "', expected '" + expected + "'");
}

}  // namespace

json to_json(const BodyModel& m) {
  return {{"version", kModelVersion},
          {"name", m.name},
          {"n_vertices", m.n_vertices},
          {"n_joints", m.n_joints},
          {"n_shape", m.n_shape},
          {"template", flat_array(m.template_vertices)},
          {"faces", flat_array(m.faces)},
          {"shape_dirs", flat_array(m.shape_dirs)},
          {"joint_regressor", flat_array(m.joint_regressor)},
          {"skin_weights", flat_array(m.skin_weights)},
          {"parents", m.parents},
          {"face_part", m.face_part}};
}

BodyModel model_from_json(const json& j) {
  check_version(j, kModelVersion);
  BodyModel m;
  m.name = get_field<std::string>(j, "name");
  m.n_vertices = get_field<int>(j, "n_vertices");
  m.n_joints = get_field<int>(j, "n_joints");
  m.n_shape = get_field<int>(j, "n_shape");
  if (m.n_vertices <= 0 || m.n_joints <= 0 || m.n_shape < 0) throw DataError("model sizes must be positive");
  const auto faces = get_field<std::vector<int>>(j, "faces");
  if (faces.size() % 3 != 0) throw DataError("field 'faces' length is not a multiple of 3");
  const auto n_faces = static_cast<Eigen::Index>(faces.size() / 3);
  m.template_vertices = matrix_field<Points3>(j, "template", m.n_vertices, 3);
  m.faces = matrix_field<Faces>(j, "faces", n_faces, 3);
  m.shape_dirs = matrix_field<RowMatrix>(j, "shape_dirs", 3 * m.n_vertices, m.n_shape);
  m.joint_regressor = matrix_field<RowMatrix>(j, "joint_regressor", m.n_joints, m.n_vertices);
  m.skin_weights = matrix_field<RowMatrix>(j, "skin_weights", m.n_vertices, m.n_joints);
  m.parents = get_field<std::vector<int>>(j, "parents");
  m.face_part = get_field<std::vector<int>>(j, "face_part");
  m.validate();
  return m;
}

void save_model(const fs::path& path, const BodyModel& model) { write_json(path, to_json(model)); }

BodyModel load_model(const fs::path& path) {
  try {
    return model_from_json(read_json(path));
  } catch (const FormatError&) {
    throw;
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

json to_json(const Checkpoint& c) {
  return {{"version", kCheckpointVersion},
          {"arch",
           {{"input_dim", c.arch.input_dim},
            {"hidden", c.arch.hidden},
            {"layers", c.arch.layers},
            {"n_shape", c.arch.n_shape},
            {"n_joints", c.arch.n_joints}}},
          {"seed", c.seed},
          {"weights", vector_json(c.weights)}};
}

Checkpoint checkpoint_from_json(const json& j) {
  check_version(j, kCheckpointVersion);
  Checkpoint c;
  const json arch = get_field<json>(j, "arch");
  c.arch.input_dim = get_field<int>(arch, "input_dim");
  c.arch.hidden = get_field<int>(arch, "hidden");
  c.arch.layers = get_field<int>(arch, "layers");
  c.arch.n_shape = get_field<int>(arch, "n_shape");
  c.arch.n_joints = get_field<int>(arch, "n_joints");
  c.seed = get_field<std::uint64_t>(j, "seed");
  c.weights = vector_field(j, "weights");
  const Regressor reg(c.arch);
  if (c.weights.size() != reg.param_count())
    throw DataError("checkpoint has " + std::to_string(c.weights.size()) + " weights, architecture needs " +
                    std::to_string(reg.param_count()));
  return c;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) { write_json(path, to_json(ckpt)); }

Checkpoint load_checkpoint(const fs::path& path) {
  try {
    return checkpoint_from_json(read_json(path));
  } catch (const FormatError&) {
    throw;
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

json to_json(const MeshParams& p) {
  return {{"beta", vector_json(p.beta)},
          {"theta", vector_json(p.theta)},
          {"scale", p.scale},
          {"trans", std::vector<double>{p.trans.x(), p.trans.y()}}};
}

MeshParams params_from_json(const json& j, const BodyModel& model) {
  MeshParams p;
  p.beta = vector_field(j, "beta");
  p.theta = vector_field(j, "theta");
  p.scale = get_field<double>(j, "scale");
  const auto t = get_field<std::vector<double>>(j, "trans");
  if (p.beta.size() != model.n_shape || p.theta.size() != model.theta_size() || t.size() != 2)
    throw DimensionError("mesh parameters do not match model '" + model.name + "'");
  if (!(p.scale > 0.0)) throw DataError("mesh parameter scale must be > 0");
  p.trans = {t[0], t[1]};
  return p;
}

json to_json(const LossTerms& t) {
  return {{"l2d", t.l2d}, {"theta", t.theta}, {"beta", t.beta}, {"shape", t.shape}, {"anchor", t.anchor},
          {"total", t.total}};
}

LossTerms loss_terms_from_json(const json& j) {
  LossTerms t;
  t.l2d = get_field<double>(j, "l2d");
  t.theta = get_field<double>(j, "theta");
  t.beta = get_field<double>(j, "beta");
  t.shape = get_field<double>(j, "shape");
  t.anchor = get_field<double>(j, "anchor");
  t.total = get_field<double>(j, "total");
  return t;
}

json to_json(const Annotation& a) {
  json j = to_json(a.params);
  j["version"] = kAnnotationVersion;
  j["sample_id"] = a.sample_id;
  j["method"] = a.method;
  j["schedule"] = a.schedule;
  j["seed"] = a.seed;
  j["final_losses"] = to_json(a.final_losses);
  return j;
}

Annotation annotation_from_json(const json& j, const BodyModel& model) {
  check_version(j, kAnnotationVersion);
  Annotation a;
  a.sample_id = get_field<std::string>(j, "sample_id");
  a.params = params_from_json(j, model);
  a.method = get_field<std::string>(j, "method");
  a.schedule = get_field<std::string>(j, "schedule");
  a.seed = get_field<std::uint64_t>(j, "seed");
  a.final_losses = loss_terms_from_json(get_field<json>(j, "final_losses"));
  return a;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace omrfit
