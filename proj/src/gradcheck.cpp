#include "matadv/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "matadv/rng.hpp"

namespace matadv::ad {

namespace {

double evaluate(const ScalarFunction& f, const Tensor& x) {
  Tape tape;
  Var out = f(tape, tape.constant(x));
  if (out.value().size() != 1) {
    throw ShapeError("grad_check: function must return a scalar, got " + to_string(out.shape()));
  }
  return out.value().item();
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& f, const Tensor& point,
                           const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  Tensor analytic;
  double f0 = 0.0;
  {
    Tape tape;
    Var x = tape.leaf(point);
    Var out = f(tape, x);
    if (out.value().size() != 1) {
      throw ShapeError("grad_check: function must return a scalar, got " + to_string(out.shape()));
    }
    f0 = out.value().item();
    analytic = tape.backward(out).of(x);
  }

  std::vector<std::size_t> components(point.size());
  std::iota(components.begin(), components.end(), std::size_t{0});
  if (options.max_components != 0 && options.max_components < components.size()) {
    Rng rng(options.seed);
    components = rng.sample_without_replacement(point.size(), options.max_components);
  }

  GradCheckResult result;
  const double h = options.step;
  Tensor probe = point;
  for (std::size_t i : components) {
    const double x0 = point[i];
    probe[i] = x0 + h;
    const double fp = evaluate(f, probe);
    probe[i] = x0 - h;
    const double fm = evaluate(f, probe);
    probe[i] = x0;

    const double right = (fp - f0) / h;
    const double left = (f0 - fm) / h;
    const double slope_scale = std::max({1e-6, std::abs(right), std::abs(left)});
    if (std::abs(right - left) > options.kink_tolerance * slope_scale) {
      result.excluded.push_back(i);
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    result.max_rel_error = std::max(result.max_rel_error, err);
    ++result.checked;
  }
  return result;
}

}  // namespace matadv::ad
