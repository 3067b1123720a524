#include "omrfit/diffengine.hpp"

#include <algorithm>
#include <cmath>

#include "omrfit/errors.hpp"

namespace omrfit {

void ParamVector::add_segment(const std::string& name, int size) {
  if (size < 0) throw ConfigError("parameter segment '" + name + "' has negative size");
  for (const auto& s : segments_)
    if (s.name == name) throw ConfigError("duplicate parameter segment '" + name + "'");
  const int offset = segments_.empty() ? 0 : segments_.back().offset + segments_.back().size;
  segments_.push_back({name, offset, size});
  if (values_.size() < offset + size) {
    const Eigen::Index old = values_.size();
    values_.conservativeResize(offset + size);
    values_.tail(values_.size() - old).setZero();
  }
}

const ParamVector::Segment& ParamVector::segment(const std::string& name) const {
  for (const auto& s : segments_)
    if (s.name == name) return s;
  throw ConfigError("unknown parameter segment '" + name + "'");
}

Eigen::Ref<Vector> ParamVector::view(const std::string& name) {
  const auto& s = segment(name);
  return values_.segment(s.offset, s.size);
}

Eigen::Ref<const Vector> ParamVector::view(const std::string& name) const {
  const auto& s = segment(name);
  return values_.segment(s.offset, s.size);
}

bool ParamVector::valid() const {
  int next = 0;
  for (const auto& s : segments_) {
    if (s.offset != next || s.size < 0) return false;
    next += s.size;
  }
  return next == size() && values_.allFinite();
}

void check_finite(double v, const char* primitive) {
  if (!std::isfinite(v)) throw NumericsError(primitive, "scalar " + std::to_string(v));
}

void check_finite(const Eigen::Ref<const Eigen::MatrixXd>& m, const char* primitive) {
  if (!m.allFinite()) throw NumericsError(primitive, "non-finite entry in " + std::to_string(m.rows()) + "x" +
                                                         std::to_string(m.cols()) + " block");
}

ValueGrad value_and_grad(const Objective& objective, const Vector& params) {
  ValueGrad out;
  out.grad = Vector::Zero(params.size());
  out.value = objective(params, &out.grad);
  check_finite(out.value, "objective");
  check_finite(out.grad, "objective gradient");
  return out;
}

AdamState AdamState::create(int size, double lr) {
  AdamState s;
  s.m = Vector::Zero(size);
  s.v = Vector::Zero(size);
  s.lr = lr;
  return s;
}

void adam_step(AdamState& s, Vector& params, const Vector& grad) {
  require_dims(params.size() == grad.size() && s.m.size() == params.size() && s.v.size() == params.size(),
               "adam: parameter, gradient and moment sizes differ");
  ++s.step_count;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step_count));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step_count));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    s.m(i) = s.beta1 * s.m(i) + (1.0 - s.beta1) * grad(i);
    s.v(i) = s.beta2 * s.v(i) + (1.0 - s.beta2) * grad(i) * grad(i);
    const double mhat = s.m(i) / c1;
    const double vhat = s.v(i) / c2;
    params(i) -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

FdReport fd_check(const Objective& objective, const Vector& params, double h, double tol,
                  std::span<const int> coordinates) {
  if (!(h > 0.0)) throw ConfigError("fd_check: h must be > 0");
  FdReport r;
  if (coordinates.empty()) {
    for (int i = 0; i < params.size(); ++i) r.coordinates.push_back(i);
  } else {
    r.coordinates.assign(coordinates.begin(), coordinates.end());
  }
  const ValueGrad vg = value_and_grad(objective, params);
  Vector x = params;
  double fd_scale = 0.0;
  for (int i : r.coordinates) {
    const double x0 = x(i);
    x(i) = x0 + h;
    const double fp = objective(x, nullptr);
    x(i) = x0 - h;
    const double fm = objective(x, nullptr);
    x(i) = x0;
    const double fd = (fp - fm) / (2.0 * h);
    r.analytic.push_back(vg.grad(i));
    r.numeric.push_back(fd);
    fd_scale = std::max(fd_scale, std::abs(fd));
  }
  const double floor = 1e-6 * fd_scale + 1e-12;
  double sum = 0.0;
  for (std::size_t k = 0; k < r.coordinates.size(); ++k) {
    const double a = r.analytic[k], n = r.numeric[k];
    const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
    r.rel_error.push_back(rel);
    r.max_rel_error = std::max(r.max_rel_error, rel);
    sum += rel;
  }
  r.mean_rel_error = r.coordinates.empty() ? 0.0 : sum / static_cast<double>(r.coordinates.size());
  r.passed = r.max_rel_error <= tol;
  return r;
}

}  // namespace omrfit
