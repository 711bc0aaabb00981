#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "amran/numeric/tensor.hpp"
#include "amran/random.hpp"

namespace amran::numeric {

struct GradCheckOptions {
  double epsilon = 1e-3;
  std::size_t min_coordinates = 32;
  // Relative errors use max(|analytic|, |numeric|, denominator_floor) below.
  double denominator_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose perturbation crosses a kink
};

// Compares the analytic gradient of `loss_fn` w.r.t. `param` against central
// differences on a random subset of coordinates (all of them if the tensor is
// small). `loss_fn` must rebuild the graph from current parameter values.
inline GradCheckResult finite_difference_check(const std::function<Tensor()>& loss_fn, Tensor param,
                                               const GradCheckOptions& opt = {}) {
  if (!(opt.epsilon > 0.0)) throw ConfigError("finite_difference_check: epsilon must be positive");
  auto& monitor = KinkMonitor::instance();

  monitor.start();
  Tensor loss = loss_fn();
  const auto base_signature = monitor.stop();
  backward(loss);
  std::vector<double> analytic(param.size(), 0.0);
  if (!param.grad().empty()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());

  std::vector<std::size_t> coords(param.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (coords.size() > opt.min_coordinates) {
    Rng rng(derive_seed(opt.seed, param.size()));
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opt.min_coordinates);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  auto values = param.data();
  for (auto i : coords) {
    const double original = values[i];
    values[i] = original + opt.epsilon;
    monitor.start();
    const double up = loss_fn().item();
    const auto sig_up = monitor.stop();
    values[i] = original - opt.epsilon;
    monitor.start();
    const double down = loss_fn().item();
    const auto sig_down = monitor.stop();
    values[i] = original;
    if (sig_up != base_signature || sig_down != base_signature) {
      ++result.skipped;
      continue;
    }
    const double numeric = (up - down) / (2.0 * opt.epsilon);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), opt.denominator_floor});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(numeric - analytic[i]) / denom);
    ++result.checked;
  }
  return result;
}

}  // namespace amran::numeric
