#pragma once

// Central finite-difference verification of the reverse-mode gradients. Runs
// in double precision; each check perturbs every input element by +-step and
// compares the analytic gradient of a scalar probe against the quotient.

#include <functional>
#include <string>
#include <vector>

#include "ltmvo/ad.hpp"
#include "ltmvo/rng.hpp"

namespace ltmvo::gradcheck {

using DVar = ad::Var<double>;

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct Settings {
  double step = 1e-4;
  double tolerance = 1e-3;
};

/// fn maps the current leaf values to a scalar Var built on those leaves.
/// Leaves are rebuilt for every evaluation so the probe sees perturbed
/// values.
inline CheckResult check(const std::string& name, std::vector<ad::Shape> input_shapes,
                         const std::function<DVar(const std::vector<DVar>&)>& fn,
                         const std::vector<std::vector<double>>& inputs,
                         const Settings& settings = {}) {
  std::vector<DVar> leaves;
  leaves.reserve(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i)
    leaves.push_back(DVar::leaf(input_shapes[i], inputs[i]));
  DVar out = fn(leaves);
  ad::backward(out);

  auto eval_at = [&](size_t which, size_t idx, double delta) {
    std::vector<DVar> probe;
    probe.reserve(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
      auto vals = inputs[i];
      if (i == which) vals[idx] += delta;
      probe.push_back(DVar::leaf(input_shapes[i], std::move(vals)));
    }
    return fn(probe).value()[0];
  };

  CheckResult result{name, 0.0, true};
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (size_t j = 0; j < inputs[i].size(); ++j) {
      const double analytic = leaves[i].grad()[j];
      const double hi = eval_at(i, j, settings.step);
      const double lo = eval_at(i, j, -settings.step);
      const double numeric = (hi - lo) / (2.0 * settings.step);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
      const double rel = std::abs(analytic - numeric) / denom;
      result.max_rel_error = std::max(result.max_rel_error, rel);
    }
  }
  result.passed = result.max_rel_error < settings.tolerance;
  return result;
}

/// The full registry used by the gradcheck CLI subcommand and acceptance
/// suite: every differentiable op and loss, on small random inputs.
std::vector<CheckResult> run_all(uint64_t seed);

}  // namespace ltmvo::gradcheck
