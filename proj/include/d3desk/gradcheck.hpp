#pragma once

#include <functional>
#include <vector>

#include "d3desk/tensor.hpp"

namespace d3desk::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  int64_t checked = 0;
};

// Compares reverse-mode gradients of a scalar-valued function against central
// finite differences at the current values of `leaves`. The function must
// rebuild its graph from the leaf tensors on every call (their values are
// perturbed in place between calls). Relative error per coordinate is
// |g - fd| / max(|g|, |fd|, 1e-3); the result is the max over all coordinates
// of all leaves. Throws on non-finite function output.
GradCheckResult grad_check(const std::function<Tensor()>& f,
                           const std::vector<Tensor>& leaves, double eps = 1e-5);

}  // namespace d3desk::ad
