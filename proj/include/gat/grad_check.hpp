#pragma once

#include <functional>
#include <span>
#include <vector>

#include "gat/tensor.hpp"

namespace gat {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares backward() against central differences for every coordinate of
/// every tensor in `wrt`. `loss` must rebuild its scalar output from the
/// current values of those tensors each time it is called. Relative error uses
/// the denominator max(|analytic|, |numeric|, 1e-8).
GradCheckResult grad_check(const std::function<Tensor()>& loss, std::span<Tensor> wrt,
                           double h = 1e-5);

/// Single-input form: `f` maps x to a scalar.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

}  // namespace gat
