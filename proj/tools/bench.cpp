#include "bench.hpp"

#include <cstdio>

#include "omrfit/errors.hpp"
#include "omrfit/io.hpp"

namespace omrfit {

namespace {

template <typename T>
T value_of(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("bench key '") + key + "' has the wrong type");
  }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string("bench '") + where + "' must be an object");
  for (const auto& [key, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in bench '" + where + "'");
  }
}

BenchData data_from_json(const json& j, BenchData d, const char* where) {
  check_keys(j, {"n", "dist", "noise"}, where);
  d.n = value_of(j, "n", d.n);
  if (j.contains("dist")) d.distribution = parse_distribution(value_of<std::string>(j, "dist", ""));
  d.noise = value_of(j, "noise", d.noise);
  if (d.n < 1) throw ConfigError(std::string("bench '") + where + "' needs n >= 1");
  return d;
}

}  // namespace

BenchSpec bench_from_json(const json& j) {
  check_keys(j, {"model", "train", "eval", "pretrain", "fit", "cells"}, "spec");
  BenchSpec s;
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, {"preset", "vertices", "joints", "shape_dims", "seed"}, "model");
    if (value_of<std::string>(m, "preset", "toy") != "toy") throw ConfigError("only the toy model preset exists");
    s.vertices = value_of(m, "vertices", s.vertices);
    s.joints = value_of(m, "joints", s.joints);
    s.shape_dims = value_of(m, "shape_dims", s.shape_dims);
    s.model_seed = value_of(m, "seed", s.model_seed);
  }
  if (j.contains("train")) s.train = data_from_json(j["train"], s.train, "train");
  if (j.contains("eval")) s.eval = data_from_json(j["eval"], s.eval, "eval");
  if (j.contains("pretrain")) {
    const json& p = j["pretrain"];
    check_keys(p, {"epochs", "lr", "hidden", "layers", "batch_size"}, "pretrain");
    s.pretrain.epochs = value_of(p, "epochs", s.pretrain.epochs);
    s.pretrain.lr = value_of(p, "lr", s.pretrain.lr);
    s.pretrain.batch_size = value_of(p, "batch_size", s.pretrain.batch_size);
    s.hidden = value_of(p, "hidden", s.hidden);
    s.layers = value_of(p, "layers", s.layers);
  }
  if (j.contains("fit")) s.fit = j["fit"];
  apply_fit_json(FitConfig{}, s.fit);
  if (!j.contains("cells") || !j["cells"].is_array() || j["cells"].empty())
    throw ConfigError("bench spec needs a non-empty 'cells' array");
  for (const auto& c : j["cells"]) {
    if (!c.is_object()) throw ConfigError("bench cells must be objects");
    BenchCell cell;
    cell.name = value_of<std::string>(c, "name", "");
    if (cell.name.empty()) throw ConfigError("every bench cell needs a name");
    const std::string method = value_of<std::string>(c, "method", "");
    if (method != "regressor") cell.method = parse_method(method);
    cell.overlay = c;
    cell.overlay.erase("name");
    cell.overlay.erase("method");
    apply_fit_json(apply_fit_json(FitConfig{}, s.fit), cell.overlay);
    for (const auto& other : s.cells)
      if (other.name == cell.name) throw ConfigError("duplicate bench cell '" + cell.name + "'");
    s.cells.push_back(std::move(cell));
  }
  return s;
}

BenchSpec load_bench(const std::filesystem::path& path) {
  try {
    return bench_from_json(read_json(path));
  } catch (const FormatError& e) {
    throw ConfigError(std::string("bench spec: ") + e.what());
  }
}

BenchContext prepare_bench(const BenchSpec& spec, std::uint64_t seed, int threads) {
  BodyModel model = make_toy_model(spec.model_seed, spec.vertices, spec.joints, spec.shape_dims);
  auto synth = [&](const BenchData& d, std::uint64_t s, const char* split) {
    SynthConfig c;
    c.n = d.n;
    c.distribution = d.distribution;
    c.noise = d.noise;
    c.seed = s;
    c.split = split;
    return synth_dataset(model, c, threads);
  };
  Dataset train = synth(spec.train, seed, "train");
  Dataset eval = synth(spec.eval, seed + 1, "eval");
  Regressor reg = Regressor::for_model(model, spec.hidden, spec.layers);
  TrainConfig tc = spec.pretrain;
  tc.seed = seed;
  Vector alpha = pretrain(reg, reg.init(seed), train.samples, tc).alpha;
  PosePrior prior = default_pose_prior(model);
  return {std::move(model), std::move(train), std::move(eval), std::move(reg), std::move(alpha), std::move(prior)};
}

BenchRow run_cell(const BenchContext& ctx, const BenchSpec& spec, const BenchCell& cell, std::uint64_t seed,
                  int threads) {
  BenchRow row;
  row.cell = cell.name;
  std::vector<MetricRow> metrics;
  const auto& samples = ctx.eval.samples;
  if (!cell.method) {
    for (const auto& obs : samples) {
      const MeshParams p = ctx.reg.predict(ctx.model, ctx.alpha, featurize(obs));
      metrics.push_back(evaluate_sample(ctx.model, p, obs));
      LossTerms t;
      const MeshObjective mesh(ctx.model, obs, nullptr, FitConfig{}.loss);
      mesh.evaluate(p.flatten(), {false, false, nullptr}, nullptr, &t);
      row.l2d += t.l2d;
    }
    row.fitted = static_cast<int>(samples.size());
  } else {
    FitConfig config = apply_fit_json(apply_fit_json(FitConfig{}, spec.fit), cell.overlay);
    config.method = *cell.method;
    config.seed = seed;
    const FitBatch batch = fit_dataset(ctx.model, ctx.reg, ctx.alpha, samples, ctx.prior, config, threads);
    std::size_t k = 0;
    for (const auto& obs : samples) {
      if (k < batch.ids.size() && batch.ids[k] == obs.sample_id) {
        metrics.push_back(evaluate_sample(ctx.model, batch.results[k].params, obs));
        row.l2d += batch.results[k].final_terms.l2d;
        ++k;
      }
    }
    row.fitted = static_cast<int>(batch.results.size());
    row.failed = static_cast<int>(batch.failures.size());
  }
  if (row.fitted > 0) row.l2d /= row.fitted;
  row.mean = make_report(std::move(metrics)).mean;
  row.mean.id = cell.name;
  return row;
}

BenchTable run_bench(const BenchSpec& spec, std::uint64_t seed, int threads) {
  const BenchContext ctx = prepare_bench(spec, seed, threads);
  BenchTable table;
  for (const auto& cell : spec.cells) table.rows.push_back(run_cell(ctx, spec, cell, seed, threads));
  return table;
}

std::string BenchTable::to_csv() const {
  std::string out = "cell";
  for (const auto& c : metric_columns()) out += "," + c;
  out += ",l2d,fitted,failed\n";
  for (const auto& r : rows) {
    out += r.cell;
    for (const auto& v : r.mean.values) out += "," + format_metric(v);
    char buf[96];
    std::snprintf(buf, sizeof buf, ",%.6e,%d,%d\n", r.l2d, r.fitted, r.failed);
    out += buf;
  }
  return out;
}

const BenchRow& BenchTable::row(const std::string& cell) const {
  for (const auto& r : rows)
    if (r.cell == cell) return r;
  throw ConfigError("no bench cell named '" + cell + "'");
}

}  // namespace omrfit
