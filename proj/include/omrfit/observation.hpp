#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "omrfit/body_model.hpp"
#include "omrfit/renderer.hpp"
#include "omrfit/types.hpp"

namespace omrfit {

// One image's worth of evidence: 2D keypoints (one per model joint) with
// visibility and a six-part label mask. gt is for evaluation only;
// annotation carries generated supervision.
struct Observation {
  std::string sample_id;
  Points2 keypoints;
  std::vector<std::uint8_t> visible;
  LabelImage labels;
  std::optional<MeshParams> gt;
  std::optional<MeshParams> annotation;
  double noise = 0.0;

  int visible_count() const {
    int n = 0;
    for (auto v : visible) n += v ? 1 : 0;
    return n;
  }
};

}  // namespace omrfit
