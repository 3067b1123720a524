#include "cli.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include "bench.hpp"
#include "omrfit/data_synth.hpp"
#include "omrfit/errors.hpp"
#include "omrfit/fitting.hpp"
#include "omrfit/io.hpp"
#include "omrfit/metrics.hpp"
#include "omrfit/regressor.hpp"

namespace omrfit {

namespace fs = std::filesystem;

namespace {

// Options shared by fit and annotate; applied only when given on the command
// line or through --config, so the config's losses block is not overridden by
// defaults.
struct FitFlags {
  std::string method = "omr";
  std::string schedule = "5P4Q";
  int iters = 20;
  std::string shape_loss = "on";
  double lr_q = 1e-3;
  double lr_p = 1e-6;
  double gamma = 1e5;
  std::string gm_per = "keypoint";
  std::uint64_t seed = 0;
  bool freeze_cam = false;
  bool p_restart = false;
  std::map<std::string, CLI::Option*> opts;
};

void add_fit_flags(CLI::App* cmd, FitFlags& f, bool with_method) {
  if (with_method)
    f.opts["method"] = cmd->add_option("--method", f.method, "fitting procedure")
                           ->check(CLI::IsMember({"smplify", "eft", "omr"}));
  f.opts["schedule"] = cmd->add_option("--schedule", f.schedule, "OMR schedule aPbQ, a in {b, b+1}");
  f.opts["iters"] = cmd->add_option("--iters", f.iters, "Adam steps per phase (total for smplify and eft)");
  f.opts["shape-loss"] =
      cmd->add_option("--shape-loss", f.shape_loss, "segmentation term L_shape")->check(CLI::IsMember({"on", "off"}));
  f.opts["lr-q"] = cmd->add_option("--lr-q", f.lr_q, "Adam learning rate of Q-phases (mesh parameters)");
  f.opts["lr-p"] = cmd->add_option("--lr-p", f.lr_p, "Adam learning rate of P-phases (regressor weights)");
  f.opts["gamma"] = cmd->add_option("--gamma", f.gamma, "soft rasterizer sharpness used by L_shape");
  f.opts["gm-per"] =
      cmd->add_option("--gm-per", f.gm_per, "Geman-McClure residual")->check(CLI::IsMember({"keypoint", "coord"}));
  f.opts["seed"] = cmd->add_option("--seed", f.seed, "run seed (recorded in outputs)");
  f.opts["freeze-cam"] = cmd->add_flag("--freeze-cam", f.freeze_cam, "keep scale and translation fixed in Q-phases");
  f.opts["p-restart"] =
      cmd->add_flag("--p-restart", f.p_restart, "restart later P-phases from the pretrained weights");
}

bool given(const FitFlags& f, const char* name) {
  const auto it = f.opts.find(name);
  return it != f.opts.end() && it->second->count() > 0;
}

FitConfig build_fit_config(const FitFlags& f, const json& losses) {
  FitConfig c;
  if (!losses.is_null()) c = apply_fit_json(c, json{{"losses", losses}});
  if (given(f, "method")) c.method = parse_method(f.method);
  if (given(f, "schedule") || c.method == FitMethod::omr) c.schedule = parse_schedule(f.schedule);
  if (given(f, "iters")) c.iters = f.iters;
  if (given(f, "lr-q")) c.lr_q = f.lr_q;
  if (given(f, "lr-p")) c.lr_p = f.lr_p;
  if (given(f, "gamma")) c.loss.render.gamma = f.gamma;
  if (given(f, "gm-per")) c.loss.gm_per = f.gm_per == "coord" ? GmMode::coord : GmMode::keypoint;
  if (given(f, "shape-loss") && f.shape_loss == "off") c.loss.weights.shape = 0.0;
  c.seed = f.seed;
  c.freeze_cam = f.freeze_cam;
  c.p_restart = f.p_restart;
  c.validate();
  return c;
}

std::string flag_name(std::string key) {
  for (char& ch : key)
    if (ch == '_') ch = '-';
  return key;
}

// Fills options not given on the command line from a JSON object keyed by
// flag name; returns the optional "losses" block.
json apply_config_file(CLI::App* cmd, const std::string& path) {
  json j;
  try {
    j = read_json(path);
  } catch (const DataError& e) {
    throw ConfigError(std::string("config file: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  json losses;
  for (const auto& [key, value] : j.items()) {
    if (key == "losses") {
      losses = value;
      continue;
    }
    CLI::Option* opt = cmd->get_option_no_throw("--" + flag_name(key));
    if (!opt || flag_name(key) == "config") throw ConfigError("config file sets unknown option '" + key + "'");
    if (opt->count() > 0) continue;
    auto text = [&](const json& v) {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
      if (v.is_number()) return v.dump();
      throw ConfigError("config value for '" + key + "' must be a string, number or boolean");
    };
    try {
      if (value.is_array())
        for (const auto& v : value) opt->add_result(text(v));
      else
        opt->add_result(text(value));
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ConfigError("config value for '" + key + "': " + e.what());
    }
  }
  return losses;
}

Dataset load_data(const std::string& dir, BodyModel& model) {
  LoadedDataset d = load_dataset(dir);
  model = std::move(d.model);
  return std::move(d.data);
}

struct Loaded {
  Regressor reg;
  Vector alpha;
};

Loaded load_regressor(const std::string& path, const BodyModel& model) {
  Checkpoint c = load_checkpoint(path);
  Regressor reg(c.arch);
  if (c.arch.n_shape != model.n_shape || c.arch.n_joints != model.n_joints ||
      c.arch.input_dim != feature_size(model.n_joints))
    throw DimensionError("checkpoint " + path + " does not match the dataset's model");
  return {std::move(reg), std::move(c.weights)};
}

void report_failures(std::ostream& err, const std::vector<SampleFailure>& failures) {
  for (const auto& f : failures) err << "warning: " << f.sample_id << ": " << f.reason << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Optimized mesh recovery on a procedural toy body: data synthesis, regressor training, "
               "SMPLify/EFT/OMR fitting and evaluation."};
  app.name("omrfit");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "help for every command");

  std::string config_path;
  std::map<CLI::App*, std::function<void()>> actions;
  auto command = [&](const char* name, const char* about) {
    CLI::App* cmd = app.add_subcommand(name, about);
    cmd->add_option("--config", config_path, "JSON file whose keys (flag names) fill flags not given")
        ->check(CLI::ExistingFile);
    return cmd;
  };
  int threads = 0;
  auto add_threads = [&](CLI::App* cmd) { cmd->add_option("--threads", threads, "worker threads (0 = all cores)"); };

  // make-model
  std::string preset = "toy", model_out;
  int vertices = 602, joints = 16, shape_dims = 10;
  std::uint64_t model_seed = 0;
  CLI::App* make_model = command("make-model", "write a procedural body model");
  make_model->add_option("--preset", preset, "model family")->check(CLI::IsMember({"toy"}));
  make_model->add_option("--out", model_out, "output model JSON")->required();
  make_model->add_option("--vertices", vertices, "target vertex count");
  make_model->add_option("--joints", joints, "joint count (16 or fewer)");
  make_model->add_option("--shape-dims", shape_dims, "shape coefficients");
  make_model->add_option("--seed", model_seed, "seed of the random shape fields");
  actions[make_model] = [&] {
    const BodyModel m = make_toy_model(model_seed, vertices, joints, shape_dims);
    save_model(model_out, m);
    out << "wrote " << model_out << ": " << m.n_vertices << " vertices, " << m.n_joints << " joints, " << m.n_shape
        << " shape coefficients\n";
  };

  // synth
  std::string synth_model, synth_out, dist = "normal", split = "train", prefix = "s";
  SynthConfig sc;
  CLI::App* synth = command("synth", "generate a synthetic dataset");
  synth->add_option("--model", synth_model, "model JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--n", sc.n, "number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--dist", dist, "shape distribution")->check(CLI::IsMember({"normal", "obese"}));
  synth->add_option("--noise", sc.noise, "keypoint noise std (normalized units)");
  synth->add_option("--seed", sc.seed, "generation seed");
  synth->add_option("--resolution", sc.resolution, "label mask resolution");
  synth->add_option("--split", split, "split recorded in the manifest")->check(CLI::IsMember({"train", "eval"}));
  synth->add_option("--prefix", prefix, "sample id prefix");
  synth->add_option("--out", synth_out, "output directory")->required();
  add_threads(synth);
  actions[synth] = [&] {
    const BodyModel m = load_model(synth_model);
    sc.distribution = parse_distribution(dist);
    sc.split = split;
    sc.prefix = prefix;
    if (sc.noise < 0.0) throw ConfigError("noise must be >= 0");
    if (sc.resolution < 8) throw ConfigError("resolution must be >= 8");
    const Dataset d = synth_dataset(m, sc, threads);
    save_dataset(synth_out, m, d);
    out << "wrote " << d.samples.size() << " samples to " << synth_out << "\n";
  };

  // pretrain
  std::string pre_data, pre_out;
  TrainConfig pre;
  int hidden = 128, layers = 2;
  CLI::App* pretrain_cmd = command("pretrain", "train the regressor on ground-truth parameters");
  pretrain_cmd->add_option("--data", pre_data, "dataset directory")->required();
  pretrain_cmd->add_option("--out", pre_out, "output checkpoint JSON")->required();
  pretrain_cmd->add_option("--epochs", pre.epochs, "training epochs");
  pretrain_cmd->add_option("--lr", pre.lr, "Adam learning rate");
  pretrain_cmd->add_option("--batch-size", pre.batch_size, "minibatch size");
  pretrain_cmd->add_option("--hidden", hidden, "hidden layer width");
  pretrain_cmd->add_option("--layers", layers, "hidden layers");
  pretrain_cmd->add_option("--seed", pre.seed, "initialization and shuffling seed");
  actions[pretrain_cmd] = [&] {
    BodyModel m;
    const Dataset d = load_data(pre_data, m);
    const Regressor reg = Regressor::for_model(m, hidden, layers);
    const TrainResult r = pretrain(reg, reg.init(pre.seed), d.samples, pre);
    save_checkpoint(pre_out, {reg.arch(), pre.seed, r.alpha});
    out << "trained " << reg.param_count() << " weights for " << pre.epochs << " epochs, final loss "
        << (r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back()) << "\n";
  };

  // fit
  std::string fit_data, fit_alpha, fit_out;
  FitFlags fit_flags;
  CLI::App* fit = command("fit", "fit every sample of a dataset");
  fit->add_option("--data", fit_data, "dataset directory")->required();
  fit->add_option("--alpha", fit_alpha, "regressor checkpoint")->required();
  fit->add_option("--out", fit_out, "output directory for per-sample fits")->required();
  add_fit_flags(fit, fit_flags, true);
  add_threads(fit);
  json fit_losses;
  actions[fit] = [&] {
    const FitConfig c = build_fit_config(fit_flags, fit_losses);
    BodyModel m;
    const Dataset d = load_data(fit_data, m);
    const Loaded reg = load_regressor(fit_alpha, m);
    const FitBatch b = fit_dataset(m, reg.reg, reg.alpha, d.samples, default_pose_prior(m), c, threads);
    save_fit_batch(b, c, fit_out);
    report_failures(err, b.failures);
    out << "fitted " << b.results.size() << " of " << d.samples.size() << " samples (" << method_name(c.method)
        << ") into " << fit_out << "\n";
  };

  // annotate
  std::string ann_data, ann_alpha, ann_out;
  FitFlags ann_flags;
  CLI::App* annotate = command("annotate", "generate OMR annotations for a dataset (ground truth is ignored)");
  annotate->add_option("--data", ann_data, "dataset directory")->required();
  annotate->add_option("--alpha", ann_alpha, "regressor checkpoint")->required();
  annotate->add_option("--out", ann_out, "output annotation directory")->required();
  add_fit_flags(annotate, ann_flags, false);
  add_threads(annotate);
  json ann_losses;
  actions[annotate] = [&] {
    const FitConfig c = build_fit_config(ann_flags, ann_losses);
    BodyModel m;
    const Dataset d = load_data(ann_data, m);
    const Loaded reg = load_regressor(ann_alpha, m);
    const AnnotationSummary s =
        annotate_dataset(m, reg.reg, reg.alpha, d.samples, default_pose_prior(m), c, ann_out, threads);
    report_failures(err, s.failures);
    out << "annotated " << s.annotated << " of " << s.requested << " samples into " << ann_out << "\n";
  };

  // retrain
  std::string re_data, re_ann, re_alpha, re_out, re_mix;
  TrainConfig re;
  re.epochs = 20;
  re.lr = 3e-4;
  bool force = false;
  CLI::App* retrain_cmd = command("retrain", "fine-tune the regressor on generated annotations");
  retrain_cmd->add_option("--data", re_data, "dataset the annotations belong to")->required();
  retrain_cmd->add_option("--annotations", re_ann, "annotation directory")->required();
  retrain_cmd->add_option("--alpha", re_alpha, "starting checkpoint")->required();
  retrain_cmd->add_option("--out", re_out, "output checkpoint JSON")->required();
  retrain_cmd->add_option("--mix", re_mix, "dataset whose ground truth is mixed into training");
  retrain_cmd->add_option("--epochs", re.epochs, "training epochs");
  retrain_cmd->add_option("--lr", re.lr, "Adam learning rate");
  retrain_cmd->add_option("--batch-size", re.batch_size, "minibatch size");
  retrain_cmd->add_option("--seed", re.seed, "shuffling seed");
  retrain_cmd->add_flag("--force", force, "replace annotations already stored in the dataset");
  actions[retrain_cmd] = [&] {
    BodyModel m;
    Dataset d = load_data(re_data, m);
    merge_annotations(d, load_annotations(re_ann, m), force);
    std::vector<Observation> mix;
    if (!re_mix.empty()) {
      BodyModel mm;
      mix = load_data(re_mix, mm).samples;
      if (mm.n_vertices != m.n_vertices || mm.n_shape != m.n_shape || mm.n_joints != m.n_joints)
        throw DimensionError("--mix dataset uses a different model");
    }
    const Loaded reg = load_regressor(re_alpha, m);
    const TrainResult r = retrain(reg.reg, reg.alpha, d.samples, re, mix);
    save_checkpoint(re_out, {reg.reg.arch(), re.seed, r.alpha});
    out << "retrained for " << re.epochs << " epochs, final loss "
        << (r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back()) << "\n";
  };

  // eval
  std::string ev_fits, ev_data, ev_report;
  bool no_root_align = false;
  CLI::App* eval = command("eval", "score fits against the dataset's ground truth");
  eval->add_option("--fits", ev_fits, "directory of per-sample fits or annotations")->required();
  eval->add_option("--data", ev_data, "dataset directory")->required();
  eval->add_option("--report", ev_report, "output report (.csv or .json)")->required();
  eval->add_flag("--no-root-align", no_root_align, "score MPJPE without root alignment");
  actions[eval] = [&] {
    BodyModel m;
    const Dataset d = load_data(ev_data, m);
    const std::vector<Annotation> fits = load_annotations(ev_fits, m);
    if (fits.empty()) throw DataError("no fits found in " + ev_fits);
    std::map<std::string, const Observation*> by_id;
    for (const auto& s : d.samples) by_id[s.sample_id] = &s;
    std::vector<MetricRow> rows;
    for (const auto& f : fits) {
      const auto it = by_id.find(f.sample_id);
      if (it == by_id.end()) throw DataError("fit for unknown sample '" + f.sample_id + "'");
      rows.push_back(evaluate_sample(m, f.params, *it->second, !no_root_align));
    }
    const MetricReport r = make_report(std::move(rows));
    const bool as_json = fs::path(ev_report).extension() == ".json";
    write_text(ev_report, as_json ? r.to_json_text() : r.to_csv());
    out << "scored " << r.rows.size() << " samples: mpjpe " << format_metric(r.mean_of("mpjpe_mm")) << " mm, pve_t "
        << format_metric(r.mean_of("pve_t_mm")) << " mm\n";
  };

  // compare
  std::string specs, cmp_out;
  std::uint64_t cmp_seed = 0;
  CLI::App* compare = command("compare", "run a benchmark matrix from a bench spec and write the table");
  compare->add_option("--specs", specs, "bench spec JSON")->required()->check(CLI::ExistingFile);
  compare->add_option("--out", cmp_out, "output CSV")->required();
  compare->add_option("--seed", cmp_seed, "benchmark seed")->required();
  add_threads(compare);
  actions[compare] = [&] {
    const BenchTable t = run_bench(load_bench(specs), cmp_seed, threads);
    write_text(cmp_out, t.to_csv());
    out << "wrote " << t.rows.size() << " rows to " << cmp_out << "\n";
  };

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << "\n\n";
      const auto sub = app.get_subcommands();
      err << (sub.empty() ? app.help() : sub.front()->help());
      return 2;
    }
    CLI::App* cmd = app.get_subcommands().front();
    if (!config_path.empty()) {
      const json losses = apply_config_file(cmd, config_path);
      if (!losses.is_null()) {
        if (cmd == fit) fit_losses = losses;
        else if (cmd == annotate) ann_losses = losses;
        else throw ConfigError("a 'losses' block only applies to fit and annotate");
      }
    }
    actions.at(cmd)();
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericsError& e) {
    err << "numerics error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace omrfit
