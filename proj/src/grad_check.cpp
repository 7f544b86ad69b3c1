#include "gat/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "gat/error.hpp"

namespace gat {

GradCheckResult grad_check(const std::function<Tensor()>& loss, std::span<Tensor> wrt, double h) {
  std::vector<bool> saved_flags;
  for (auto& t : wrt) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = loss();
    tape.backward(out);
    for (auto& t : wrt) analytic.push_back(t.grad());
  }

  GradCheckResult result;
  NoGradScope no_grad;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto values = wrt[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + h;
      const double up = loss().item();
      values[i] = original - h;
      const double down = loss().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      if (err > result.max_rel_error || std::isnan(err)) {
        result = {err, k, i, a, numeric};
      }
    }
  }
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    wrt[k].zero_grad();
    wrt[k].set_requires_grad(saved_flags[k]);
  }
  return result;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor input = x.clone(true);
  Tensor inputs[] = {input};
  return grad_check([&] { return f(inputs[0]); }, inputs, h).max_rel_error;
}

}  // namespace gat
