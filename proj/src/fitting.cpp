#include "omrfit/fitting.hpp"

#include <algorithm>
#include <chrono>
#include <charconv>
#include <numeric>

#include "omrfit/diffengine.hpp"
#include "omrfit/errors.hpp"
#include "omrfit/parallel.hpp"

namespace omrfit {

namespace fs = std::filesystem;

Schedule parse_schedule(std::string_view text) {
  auto fail = [&](const std::string& why) {
    throw ScheduleError("invalid schedule '" + std::string(text) + "': " + why);
  };
  const auto p = text.find('P');
  if (p == std::string_view::npos || p == 0 || text.size() < 4 || text.back() != 'Q') fail("expected the form aPbQ");
  auto number = [&](std::string_view s) {
    int v = 0;
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) fail("expected digits");
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc()) fail("count out of range");
    return v;
  };
  Schedule s;
  s.n_p = number(text.substr(0, p));
  s.n_q = number(text.substr(p + 1, text.size() - p - 2));
  if (s.n_p < 1 || s.n_q < 1) fail("counts must be at least 1");
  if (s.n_p != s.n_q && s.n_p != s.n_q + 1) fail("the number of P-phases must equal or exceed the Q-phases by one");
  s.phases.push_back(PhaseKind::P0);
  for (int i = 1; i < s.n_p + s.n_q; ++i) s.phases.push_back(i % 2 ? PhaseKind::Q : PhaseKind::P);
  return s;
}

const char* phase_name(PhaseKind kind) {
  switch (kind) {
    case PhaseKind::P0: return "P0";
    case PhaseKind::P: return "P";
    case PhaseKind::Q: return "Q";
  }
  return "?";
}

const char* method_name(FitMethod m) {
  switch (m) {
    case FitMethod::smplify: return "smplify";
    case FitMethod::eft: return "eft";
    case FitMethod::omr: return "omr";
  }
  return "?";
}

FitMethod parse_method(std::string_view text) {
  if (text == "smplify") return FitMethod::smplify;
  if (text == "eft") return FitMethod::eft;
  if (text == "omr") return FitMethod::omr;
  throw ConfigError("unknown method '" + std::string(text) + "' (expected smplify, eft or omr)");
}

void FitConfig::validate() const {
  if (iters < 0) throw ConfigError("iterations must be >= 0");
  if (!(lr_q > 0.0) || !(lr_p > 0.0)) throw ConfigError("learning rates must be > 0");
  loss.validate();
}

json to_json(const FitConfig& c) {
  const LossWeights& w = c.loss.weights;
  return {{"method", method_name(c.method)},
          {"schedule", c.schedule.text()},
          {"iters", c.iters},
          {"lr_q", c.lr_q},
          {"lr_p", c.lr_p},
          {"losses",
           {{"l2d", w.l2d},
            {"theta", w.theta},
            {"beta", w.beta},
            {"shape", w.shape},
            {"anchor", w.anchor},
            {"sigma", c.loss.sigma},
            {"gm_per", c.loss.gm_per == GmMode::keypoint ? "keypoint" : "coord"},
            {"gamma", c.loss.render.gamma}}},
          {"seed", c.seed},
          {"freeze_cam", c.freeze_cam},
          {"p_restart", c.p_restart}};
}

namespace {

template <typename T>
T config_value(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

GmMode parse_gm_mode(const std::string& text) {
  if (text == "keypoint") return GmMode::keypoint;
  if (text == "coord") return GmMode::coord;
  throw ConfigError("unknown gm_per '" + text + "' (expected keypoint or coord)");
}

}  // namespace

FitConfig apply_fit_json(FitConfig c, const json& j) {
  if (!j.is_object()) throw ConfigError("fit config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "method") c.method = parse_method(config_value<std::string>(v, key));
    else if (key == "schedule") c.schedule = parse_schedule(config_value<std::string>(v, key));
    else if (key == "iters") c.iters = config_value<int>(v, key);
    else if (key == "lr_q") c.lr_q = config_value<double>(v, key);
    else if (key == "lr_p") c.lr_p = config_value<double>(v, key);
    else if (key == "seed") c.seed = config_value<std::uint64_t>(v, key);
    else if (key == "freeze_cam") c.freeze_cam = config_value<bool>(v, key);
    else if (key == "p_restart") c.p_restart = config_value<bool>(v, key);
    else if (key == "losses") {
      if (!v.is_object()) throw ConfigError("'losses' must be a JSON object");
      LossConfig& l = c.loss;
      for (const auto& [k, x] : v.items()) {
        if (k == "l2d") l.weights.l2d = config_value<double>(x, k);
        else if (k == "theta") l.weights.theta = config_value<double>(x, k);
        else if (k == "beta") l.weights.beta = config_value<double>(x, k);
        else if (k == "shape") l.weights.shape = config_value<double>(x, k);
        else if (k == "anchor") l.weights.anchor = config_value<double>(x, k);
        else if (k == "sigma") l.sigma = config_value<double>(x, k);
        else if (k == "gm_per") l.gm_per = parse_gm_mode(config_value<std::string>(x, k));
        else if (k == "gamma") l.render.gamma = config_value<double>(x, k);
        else throw ConfigError("unknown loss key '" + k + "'");
      }
    } else {
      throw ConfigError("unknown fit config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

std::string config_hash(const FitConfig& config) { return fnv1a_hex(to_json(config).dump()); }

namespace {

constexpr double kMinScale = 1e-3;

struct PhaseContext {
  int index;
  PhaseKind kind;
};

// Adam from x for iters steps; post runs after every step.
template <typename F, typename Post>
PhaseTrace run_phase(const PhaseContext& ctx, Vector& x, int iters, double lr, F&& objective, Post&& post) {
  PhaseTrace trace;
  trace.kind = ctx.kind;
  AdamState adam = AdamState::create(static_cast<int>(x.size()), lr);
  Vector g(x.size());
  int it = 0;
  try {
    for (; it < iters; ++it) {
      trace.losses.push_back(objective(x, &g));
      adam_step(adam, x, g);
      post(x);
    }
    trace.final_loss = objective(x, nullptr);
  } catch (const NumericsError& e) {
    throw NumericsError(e.primitive(), std::string("phase ") + std::to_string(ctx.index) + " (" + phase_name(ctx.kind) +
                                           ") iteration " + std::to_string(it) + ": " + e.what());
  }
  if (!trace.losses.empty()) trace.non_monotone = trace.final_loss > trace.losses.front() + 1e-6;
  return trace;
}

FitResult start_result(const BodyModel& model, const FitConfig& config) {
  config.validate();
  FitResult r;
  r.config_hash = config_hash(config);
  r.seed = config.seed;
  r.model_name = model.name;
  return r;
}

bool use_shape(const FitConfig& config) { return config.loss.weights.shape > 0.0; }

void finish(FitResult& r, const MeshObjective& mesh, const FitConfig& config,
            std::chrono::steady_clock::time_point start) {
  const bool has_masks = mesh.observation().labels.width > 0;
  mesh.evaluate(r.params.flatten(), {true, use_shape(config) && has_masks, nullptr}, nullptr, &r.final_terms);
  r.no_visible = r.final_terms.no_visible;
  r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Θ-phase: Q-objective, scale kept positive, camera optionally frozen.
PhaseTrace q_phase(const MeshObjective& mesh, const FitConfig& config, int index, Vector& flat) {
  const int cam = mesh.model().n_shape + mesh.model().theta_size();
  const TermSet terms{true, use_shape(config), nullptr};
  auto objective = [&](const Vector& x, Vector* g) {
    const double v = mesh.evaluate(x, terms, g);
    if (g && config.freeze_cam) g->tail(3).setZero();
    return v;
  };
  auto post = [&](Vector& x) { x(cam) = std::max(x(cam), kMinScale); };
  return run_phase({index, PhaseKind::Q}, flat, config.iters, config.lr_q, objective, post);
}

PhaseTrace p_phase(const RegressorObjective& obj, const FitConfig& config, int index, PhaseKind kind, Vector& alpha) {
  auto objective = [&](const Vector& x, Vector* g) { return obj.evaluate(x, g); };
  return run_phase({index, kind}, alpha, config.iters, config.lr_p, objective, [](Vector&) {});
}

}  // namespace

FitResult fit_smplify(const BodyModel& model, const Observation& obs, const MeshParams& init, const PosePrior& prior,
                      const FitConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  FitResult r = start_result(model, config);
  const MeshObjective mesh(model, obs, &prior, config.loss);
  Vector flat = init.flatten();
  r.phases.push_back(q_phase(mesh, config, 0, flat));
  r.params = MeshParams::unflatten(model, flat);
  finish(r, mesh, config, start);
  return r;
}

FitResult fit_eft(const BodyModel& model, const Regressor& reg, const Vector& alpha_pre, const Observation& obs,
                  const PosePrior& prior, const FitConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  FitResult r = start_result(model, config);
  const MeshObjective mesh(model, obs, &prior, config.loss);
  const RegressorObjective obj(reg, mesh, std::nullopt, use_shape(config));
  Vector alpha = alpha_pre;
  r.phases.push_back(p_phase(obj, config, 0, PhaseKind::P0, alpha));
  r.params = reg.predict(model, alpha, featurize(obs));
  finish(r, mesh, config, start);
  return r;
}

FitResult fit_omr(const BodyModel& model, const Regressor& reg, const Vector& alpha_pre, const Observation& obs,
                  const PosePrior& prior, const FitConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  FitResult r = start_result(model, config);
  if (config.schedule.phases.empty() || config.schedule.phases.front() != PhaseKind::P0)
    throw ScheduleError("schedule must start with P0");
  const MeshObjective mesh(model, obs, &prior, config.loss);
  const Vector features = featurize(obs);
  Vector alpha = alpha_pre;
  Vector theta;
  for (std::size_t i = 0; i < config.schedule.phases.size(); ++i) {
    const PhaseKind kind = config.schedule.phases[i];
    const int index = static_cast<int>(i);
    if (kind == PhaseKind::Q) {
      r.phases.push_back(q_phase(mesh, config, index, theta));
      continue;
    }
    if (kind == PhaseKind::P0) {
      const RegressorObjective obj(reg, mesh);
      r.phases.push_back(p_phase(obj, config, index, kind, alpha));
    } else {
      if (config.p_restart) alpha = alpha_pre;
      const RegressorObjective obj(reg, mesh, theta, true);
      r.phases.push_back(p_phase(obj, config, index, kind, alpha));
    }
    theta = reg.predict_flat(alpha, features);
  }
  r.params = MeshParams::unflatten(model, theta);
  finish(r, mesh, config, start);
  return r;
}

FitResult fit_sample(const BodyModel& model, const Regressor& reg, const Vector& alpha_pre, const Observation& obs,
                     const PosePrior& prior, const FitConfig& config) {
  switch (config.method) {
    case FitMethod::smplify:
      return fit_smplify(model, obs, reg.predict(model, alpha_pre, featurize(obs)), prior, config);
    case FitMethod::eft:
      return fit_eft(model, reg, alpha_pre, obs, prior, config);
    case FitMethod::omr:
      return fit_omr(model, reg, alpha_pre, obs, prior, config);
  }
  throw ConfigError("unknown method");
}

Annotation to_annotation(const FitResult& result, const std::string& sample_id, const FitConfig& config) {
  Annotation a;
  a.sample_id = sample_id;
  a.params = result.params;
  a.method = method_name(config.method);
  a.schedule = config.method == FitMethod::omr ? config.schedule.text() : "";
  a.seed = config.seed;
  a.final_losses = result.final_terms;
  return a;
}

json to_json(const FitResult& result, const std::string& sample_id, const FitConfig& config) {
  json j = to_json(to_annotation(result, sample_id, config));
  json phases = json::array();
  for (const auto& p : result.phases)
    phases.push_back({{"phase", phase_name(p.kind)},
                      {"losses", p.losses},
                      {"final", p.final_loss},
                      {"non_monotone", p.non_monotone}});
  j["trajectories"] = std::move(phases);
  j["config_hash"] = result.config_hash;
  j["model"] = result.model_name;
  return j;
}

FitBatch fit_dataset(const BodyModel& model, const Regressor& reg, const Vector& alpha_pre,
                     const std::vector<Observation>& samples, const PosePrior& prior, const FitConfig& config,
                     int threads) {
  config.validate();
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return samples[a].sample_id < samples[b].sample_id; });
  std::vector<std::optional<FitResult>> results(samples.size());
  std::vector<std::string> reasons(samples.size());
  parallel_for(
      order.size(),
      [&](std::size_t k) {
        const Observation& obs = samples[order[k]];
        if (obs.visible_count() == 0) {
          reasons[k] = "no visible keypoints";
          return;
        }
        try {
          results[k] = fit_sample(model, reg, alpha_pre, obs, prior, config);
        } catch (const NumericsError& e) {
          reasons[k] = e.what();
        }
      },
      threads);
  FitBatch batch;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::string& id = samples[order[k]].sample_id;
    if (results[k]) {
      batch.ids.push_back(id);
      batch.results.push_back(std::move(*results[k]));
    } else {
      batch.failures.push_back({id, reasons[k]});
    }
  }
  return batch;
}

namespace {

json summary_json(int requested, const FitBatch& batch, const LossTerms& mean) {
  json failures = json::array();
  for (const auto& f : batch.failures) failures.push_back({{"sample_id", f.sample_id}, {"reason", f.reason}});
  return {{"requested", requested},
          {"succeeded", batch.results.size()},
          {"samples", batch.ids},
          {"failures", failures},
          {"mean_final_losses", to_json(mean)}};
}

LossTerms mean_terms(const FitBatch& batch) {
  LossTerms m;
  if (batch.results.empty()) return m;
  for (const auto& r : batch.results) {
    m.l2d += r.final_terms.l2d;
    m.theta += r.final_terms.theta;
    m.beta += r.final_terms.beta;
    m.shape += r.final_terms.shape;
    m.anchor += r.final_terms.anchor;
    m.total += r.final_terms.total;
  }
  const double n = static_cast<double>(batch.results.size());
  m.l2d /= n;
  m.theta /= n;
  m.beta /= n;
  m.shape /= n;
  m.anchor /= n;
  m.total /= n;
  return m;
}

}  // namespace

void save_fit_batch(const FitBatch& batch, const FitConfig& config, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < batch.results.size(); ++i)
    write_json(out_dir / (batch.ids[i] + ".json"), to_json(batch.results[i], batch.ids[i], config));
  json s = summary_json(static_cast<int>(batch.ids.size() + batch.failures.size()), batch, mean_terms(batch));
  s["config"] = to_json(config);
  write_json(out_dir / "summary.json", s);
}

AnnotationSummary annotate_dataset(const BodyModel& model, const Regressor& reg, const Vector& alpha_pre,
                                   const std::vector<Observation>& samples, const PosePrior& prior,
                                   const FitConfig& config, const fs::path& out_dir, int threads) {
  FitConfig omr = config;
  omr.method = FitMethod::omr;
  std::vector<Observation> stripped = samples;
  for (auto& obs : stripped) {
    obs.gt.reset();
    obs.annotation.reset();
  }
  const FitBatch batch = fit_dataset(model, reg, alpha_pre, stripped, prior, omr, threads);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < batch.results.size(); ++i)
    write_json(out_dir / (batch.ids[i] + ".json"), to_json(to_annotation(batch.results[i], batch.ids[i], omr)));
  AnnotationSummary summary;
  summary.requested = static_cast<int>(samples.size());
  summary.annotated = static_cast<int>(batch.results.size());
  summary.failures = batch.failures;
  summary.mean_final = mean_terms(batch);
  json s = summary_json(summary.requested, batch, summary.mean_final);
  s["version"] = kAnnotationVersion;
  s["config"] = to_json(omr);
  write_json(out_dir / "summary.json", s);
  return summary;
}

}  // namespace omrfit
