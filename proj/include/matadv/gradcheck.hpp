#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "matadv/autodiff.hpp"

namespace matadv::ad {

using ScalarFunction = std::function<Var(Tape&, const Var&)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Check at most this many components (0 = all), chosen with `seed`.
  std::size_t max_components = 0;
  std::uint64_t seed = 0;
  /// One-sided slopes whose difference exceeds this fraction of the larger
  /// slope (floored at 1e-6) mark a kink. A kink that slips under it moves the
  /// central difference by at most about half this relative amount.
  double kink_tolerance = 1e-3;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Components sitting on a non-differentiable point; not compared.
  std::vector<std::size_t> excluded;
};

/// Compares reverse-mode gradients of `f` at `point` against central
/// differences. Relative error per component is
/// |a - n| / max(1e-8, |a| + |n|).
GradCheckResult grad_check(const ScalarFunction& f, const Tensor& point,
                           const GradCheckOptions& options = {});

}  // namespace matadv::ad
