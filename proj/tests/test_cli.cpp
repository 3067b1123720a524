#include <doctest.h>

#include <sstream>

#include "cli.hpp"
#include "omrfit/io.hpp"
#include "support.hpp"

using namespace omrfit;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "omrfit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = read_text(e.path());
  return out;
}

fs::path data_file(const char* name) { return fs::path(OMRFIT_SOURCE_DIR) / "tests" / "data" / name; }

// Model, a small normal training set, an obese set and a checkpoint.
struct Workspace {
  fs::path dir;
  std::string model, train, obese, alpha;
};

const Workspace& workspace() {
  static const Workspace w = [] {
    Workspace ws;
    ws.dir = test::scratch_dir("cli");
    ws.model = (ws.dir / "m.json").string();
    ws.train = (ws.dir / "train").string();
    ws.obese = (ws.dir / "obese").string();
    ws.alpha = (ws.dir / "alpha.json").string();
    REQUIRE(run({"make-model", "--preset", "toy", "--out", ws.model}).code == 0);
    REQUIRE(run({"synth", "--model", ws.model, "--n", "20", "--dist", "normal", "--seed", "0", "--resolution", "32",
                 "--out", ws.train})
                .code == 0);
    REQUIRE(run({"synth", "--model", ws.model, "--n", "4", "--dist", "obese", "--seed", "1", "--resolution", "32",
                 "--split", "eval", "--prefix", "ob", "--out", ws.obese})
                .code == 0);
    REQUIRE(run({"pretrain", "--data", ws.train, "--out", ws.alpha, "--epochs", "2", "--seed", "0"}).code == 0);
    return ws;
  }();
  return w;
}

}  // namespace

TEST_CASE("help documents every command") {
  const Run top = run({"--help"});
  CHECK(top.code == 0);
  const std::map<std::string, std::vector<std::string>> flags = {
      {"make-model", {"--preset", "--out", "--vertices", "--joints", "--shape-dims", "--seed"}},
      {"synth", {"--model", "--n", "--dist", "--noise", "--seed", "--out", "--resolution"}},
      {"pretrain", {"--data", "--out", "--epochs", "--lr", "--seed"}},
      {"fit", {"--method", "--schedule", "--iters", "--shape-loss", "--data", "--alpha", "--out", "--seed",
               "--freeze-cam", "--p-restart", "--lr-q", "--lr-p"}},
      {"annotate", {"--data", "--alpha", "--schedule", "--out"}},
      {"retrain", {"--data", "--annotations", "--alpha", "--out", "--mix", "--force"}},
      {"eval", {"--fits", "--data", "--report", "--no-root-align"}},
      {"compare", {"--specs", "--out", "--seed"}}};
  for (const auto& [cmd, names] : flags) {
    CHECK(top.out.find(cmd) != std::string::npos);
    const Run h = run({cmd, "--help"});
    CHECK(h.code == 0);
    for (const auto& f : names) CHECK_MESSAGE(h.out.find(f) != std::string::npos, cmd << " help lacks " << f);
    CHECK(h.out.find("--config") != std::string::npos);
  }
  // Defaults are shown.
  CHECK(run({"fit", "--help"}).out.find("5P4Q") != std::string::npos);
}

TEST_CASE("usage errors exit with 2") {
  const Run unknown = run({"fit", "--bogus"});
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("Usage") != std::string::npos);
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"compare", "--specs", data_file("compare_small.json").string(), "--out", "x.csv"}).code == 2);

  const Workspace& w = workspace();
  const Run sched = run({"fit", "--schedule", "3P5Q", "--data", w.obese, "--alpha", w.alpha, "--out",
                         (w.dir / "never").string()});
  CHECK(sched.code == 2);
  CHECK(sched.err.find("invalid schedule '3P5Q'") != std::string::npos);
  CHECK_FALSE(fs::exists(w.dir / "never"));
  CHECK(run({"fit", "--method", "spin", "--data", w.obese, "--alpha", w.alpha, "--out", "x"}).code == 2);
  CHECK(run({"fit", "--iters", "-3", "--data", w.obese, "--alpha", w.alpha, "--out", "x"}).code == 2);
}

TEST_CASE("data errors exit with 3") {
  const Workspace& w = workspace();
  CHECK(run({"pretrain", "--data", (w.dir / "missing").string(), "--out", "x.json"}).code == 3);
  const std::string fits = (w.dir / "fits_train").string();
  REQUIRE(run({"fit", "--method", "smplify", "--iters", "1", "--data", w.train, "--alpha", w.alpha, "--out", fits})
              .code == 0);
  const Run mismatch = run({"eval", "--fits", fits, "--data", w.obese, "--report", (w.dir / "r.csv").string()});
  CHECK(mismatch.code == 3);
  CHECK(mismatch.err.find("unknown sample") != std::string::npos);
}

TEST_CASE("pipeline end to end") {
  const Workspace& w = workspace();
  const std::string fits = (w.dir / "fits").string();
  const Run fit = run({"fit", "--method", "omr", "--schedule", "2P1Q", "--iters", "2", "--data", w.obese, "--alpha",
                       w.alpha, "--out", fits, "--seed", "3"});
  REQUIRE(fit.code == 0);
  CHECK(fit.out.find("fitted 4 of 4") != std::string::npos);
  const json one = read_json(fs::path(fits) / "ob00000.json");
  CHECK(one["schedule"] == "2P1Q");
  CHECK(one["seed"] == 3);
  CHECK(one["trajectories"].size() == 3);
  CHECK(one["trajectories"][0]["losses"].size() == 2);

  const std::string csv = (w.dir / "report.csv").string();
  REQUIRE(run({"eval", "--fits", fits, "--data", w.obese, "--report", csv}).code == 0);
  const std::string report = read_text(csv);
  CHECK(report.rfind("sample_id,mpjpe_mm,", 0) == 0);
  CHECK(std::count(report.begin(), report.end(), '\n') == 6);
  const std::string js = (w.dir / "report.json").string();
  REQUIRE(run({"eval", "--fits", fits, "--data", w.obese, "--report", js, "--no-root-align"}).code == 0);
  CHECK(json::parse(read_text(js))["samples"].size() == 4);

  // The config file fills flags that were not given.
  const fs::path cfg = w.dir / "fit.json";
  write_json(cfg, {{"method", "omr"}, {"schedule", "2P1Q"}, {"iters", 2}, {"seed", 3}});
  const std::string fits_cfg = (w.dir / "fits_cfg").string();
  REQUIRE(run({"fit", "--config", cfg.string(), "--data", w.obese, "--alpha", w.alpha, "--out", fits_cfg}).code == 0);
  CHECK(dir_bytes(fits) == dir_bytes(fits_cfg));
  write_json(cfg, {{"iterations", 2}});
  CHECK(run({"fit", "--config", cfg.string(), "--data", w.obese, "--alpha", w.alpha, "--out", fits_cfg}).code == 2);

  const std::string ann = (w.dir / "ann").string();
  const std::string ann2 = (w.dir / "ann2").string();
  for (const auto& dir : {ann, ann2})
    REQUIRE(run({"annotate", "--data", w.obese, "--alpha", w.alpha, "--schedule", "2P1Q", "--iters", "2", "--seed",
                 "0", "--out", dir})
                .code == 0);
  CHECK(dir_bytes(ann) == dir_bytes(ann2));
  CHECK(dir_bytes(ann).size() == 5);

  const std::string a2 = (w.dir / "alpha2.json").string();
  const std::string a3 = (w.dir / "alpha3.json").string();
  REQUIRE(run({"retrain", "--data", w.obese, "--annotations", ann, "--alpha", w.alpha, "--out", a2, "--epochs", "2"})
              .code == 0);
  REQUIRE(run({"retrain", "--data", w.obese, "--annotations", ann, "--alpha", w.alpha, "--out", a3, "--epochs", "2"})
              .code == 0);
  CHECK(read_text(a2) == read_text(a3));
  CHECK(read_text(a2) != read_text(w.alpha));
  REQUIRE(run({"retrain", "--data", w.obese, "--annotations", ann, "--alpha", w.alpha, "--out", a3, "--epochs", "2",
               "--mix", w.train})
              .code == 0);
  CHECK(read_text(a2) != read_text(a3));
  CHECK(run({"retrain", "--data", w.train, "--annotations", ann, "--alpha", w.alpha, "--out", a3}).code == 3);
}

TEST_CASE("compare matches the golden table") {
  const auto dir = test::scratch_dir("compare");
  const std::string golden = read_text(data_file("compare_small_golden.csv"));
  for (const char* name : {"a.csv", "b.csv"}) {
    const Run r = run({"compare", "--specs", data_file("compare_small.json").string(), "--out", (dir / name).string(),
                       "--seed", "0"});
    REQUIRE(r.code == 0);
  }
  CHECK(read_text(dir / "a.csv") == read_text(dir / "b.csv"));
  CHECK(read_text(dir / "a.csv") == golden);
  const std::string header = golden.substr(0, golden.find('\n'));
  CHECK(header.rfind("cell,mpjpe_mm,pa_mpjpe_mm,pve_t_mm", 0) == 0);
}
