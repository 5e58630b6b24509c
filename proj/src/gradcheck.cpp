#include "d3desk/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace d3desk::ad {

GradCheckResult grad_check(const std::function<Tensor()>& f,
                           const std::vector<Tensor>& leaves, double eps) {
  if (eps < 1e-6 || eps > 1e-3)
    throw std::invalid_argument("grad_check: eps must be in [1e-6, 1e-3]");

  for (const auto& leaf : leaves)
    const_cast<Tensor&>(leaf).zero_grad();

  Tensor out = f();
  const double y0 = static_cast<double>(out.item());
  if (!std::isfinite(y0)) throw std::runtime_error("grad_check: non-finite output");
  out.backward();

  GradCheckResult res;
  for (const auto& leaf : leaves) {
    Tensor& l = const_cast<Tensor&>(leaf);
    auto& vals = l.v();
    auto& grads = l.g();
    for (size_t i = 0; i < vals.size(); ++i) {
      const Scalar saved = vals[i];
      vals[i] = saved + static_cast<Scalar>(eps);
      double yp;
      {
        NoGradGuard ng;
        yp = static_cast<double>(f().item());
      }
      vals[i] = saved - static_cast<Scalar>(eps);
      double ym;
      {
        NoGradGuard ng;
        ym = static_cast<double>(f().item());
      }
      vals[i] = saved;
      if (!std::isfinite(yp) || !std::isfinite(ym))
        throw std::runtime_error("grad_check: non-finite output under perturbation");
      const double fd = (yp - ym) / (2.0 * eps);
      const double g = static_cast<double>(grads[i]);
      const double denom = std::max({std::abs(g), std::abs(fd), 1e-3});
      res.max_rel_error = std::max(res.max_rel_error, std::abs(g - fd) / denom);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace d3desk::ad
