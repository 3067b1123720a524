#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "omrfit/types.hpp"

namespace omrfit {

// Flat parameter vector with named, contiguous segments.
class ParamVector {
 public:
  struct Segment {
    std::string name;
    int offset;
    int size;
  };

  ParamVector() = default;
  explicit ParamVector(Vector values) : values_(std::move(values)) {}

  // Appends a named segment; the values grow to cover it.
  void add_segment(const std::string& name, int size);
  const Segment& segment(const std::string& name) const;
  Eigen::Ref<Vector> view(const std::string& name);
  Eigen::Ref<const Vector> view(const std::string& name) const;
  const std::vector<Segment>& segments() const { return segments_; }

  Vector& values() { return values_; }
  const Vector& values() const { return values_; }
  int size() const { return static_cast<int>(values_.size()); }

  // True when segments partition the vector and all values are finite.
  bool valid() const;

 private:
  Vector values_;
  std::vector<Segment> segments_;
};

// Objective: returns f(x) and, when grad is non-null, writes df/dx into it
// (already sized to x).
using Objective = std::function<double(const Vector& x, Vector* grad)>;

struct ValueGrad {
  double value = 0.0;
  Vector grad;
};

// Throws NumericsError naming the offending primitive when the value or the
// gradient is not finite.
ValueGrad value_and_grad(const Objective& objective, const Vector& params);

void check_finite(double v, const char* primitive);
void check_finite(const Eigen::Ref<const Eigen::MatrixXd>& m, const char* primitive);

struct AdamState {
  Vector m;
  Vector v;
  long step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState create(int size, double lr);
};

// Bias-corrected Adam update, in place.
void adam_step(AdamState& state, Vector& params, const Vector& grad);

struct FdReport {
  std::vector<int> coordinates;
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> rel_error;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  bool passed = true;
};

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate. The
// relative error of coordinate i is |g_i - fd_i| / max(|g_i|, |fd_i|, floor)
// with floor = 1e-6 * max_j |fd_j| + 1e-12, so coordinates whose derivative
// is negligible next to the largest one are judged on that scale.
// An empty coordinate list checks every coordinate.
FdReport fd_check(const Objective& objective, const Vector& params, double h, double tol,
                  std::span<const int> coordinates = {});

}  // namespace omrfit
