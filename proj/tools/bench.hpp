#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "omrfit/data_synth.hpp"
#include "omrfit/fitting.hpp"
#include "omrfit/metrics.hpp"

namespace omrfit {

// One row of a comparison table. method "regressor" reports Φ's prediction
// without any fitting.
struct BenchCell {
  std::string name;
  std::optional<FitMethod> method;
  json overlay;  // applied on top of the spec-wide fit config
};

struct BenchData {
  int n = 50;
  Distribution distribution = Distribution::normal;
  double noise = 0.01;
};

// Bench spec file:
//   {"model": {"preset": "toy", "vertices", "joints", "shape_dims", "seed"},
//    "train": {"n", "dist", "noise"}, "eval": {...},
//    "pretrain": {"epochs", "lr", "hidden", "layers"},
//    "fit": {FitConfig overlay}, "cells": [{"name", "method", ...overlay}]}
// With run seed S: train data uses seed S, eval data S + 1, α init and
// pretraining S.
struct BenchSpec {
  int vertices = 602;
  int joints = 16;
  int shape_dims = 10;
  std::uint64_t model_seed = 0;
  BenchData train{500, Distribution::normal, 0.01};
  BenchData eval;
  TrainConfig pretrain;
  int hidden = 128;
  int layers = 2;
  json fit = json::object();
  std::vector<BenchCell> cells;
};

BenchSpec bench_from_json(const json& j);
BenchSpec load_bench(const std::filesystem::path& path);

struct BenchRow {
  std::string cell;
  MetricRow mean;
  double l2d = 0.0;  // mean final 2D term (unweighted)
  int fitted = 0;
  int failed = 0;
};

struct BenchTable {
  std::vector<BenchRow> rows;
  std::string to_csv() const;
  const BenchRow& row(const std::string& cell) const;
};

// Everything a bench run builds before the cells are fitted.
struct BenchContext {
  BodyModel model;
  Dataset train;
  Dataset eval;
  Regressor reg;
  Vector alpha;
  PosePrior prior;
};

BenchContext prepare_bench(const BenchSpec& spec, std::uint64_t seed, int threads = 0);
BenchRow run_cell(const BenchContext& ctx, const BenchSpec& spec, const BenchCell& cell, std::uint64_t seed,
                  int threads = 0);
BenchTable run_bench(const BenchSpec& spec, std::uint64_t seed, int threads = 0);

}  // namespace omrfit
