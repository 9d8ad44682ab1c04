#pragma once

// Central finite-difference gradient verification. The loss thunk must be a
// pure function of the parameter values it reads, so that perturbing one
// entry and re-evaluating is valid.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "npv/autodiff.hpp"

namespace npv {

struct GradCheckEntry {
  std::string name;
  Eigen::Index row = 0, col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  GradCheckEntry worst;
  int checked = 0;
  int zero_grad = 0;  // entries where both analytic and numeric vanish
};

// Compares analytic gradients of `loss_fn()` against central differences for
// the given named parameter tensors. `stride` samples every stride-th entry.
// Per-entry error is |a - n| / max(|a|, |n|, denom_floor); the floor keeps
// O(step^2) truncation noise on vanishing gradients from dominating the
// report while real sign/scale bugs on meaningful gradients still surface.
inline GradCheckReport grad_check(
    const std::function<double()>& loss_fn,
    const std::function<ad::GradMap()>& grads_fn,
    const std::vector<std::pair<std::string, ad::Tensor>>& params, double step = 1e-3,
    int stride = 1, double denom_floor = 1e-2) {
  GradCheckReport rep;
  ad::GradMap analytic = grads_fn();
  for (const auto& [name, p] : params) {
    ad::Mat ga = ad::Mat::Zero(p.rows(), p.cols());
    auto it = analytic.find(p.node().get());
    if (it != analytic.end()) ga = it->second;
    ad::Mat& theta = p.node()->value;
    int counter = 0;
    for (Eigen::Index j = 0; j < theta.cols(); ++j) {
      for (Eigen::Index i = 0; i < theta.rows(); ++i) {
        if (counter++ % stride != 0) continue;
        double orig = theta(i, j);
        theta(i, j) = orig + step;
        double up = loss_fn();
        theta(i, j) = orig - step;
        double down = loss_fn();
        theta(i, j) = orig;
        double numeric = (up - down) / (2.0 * step);
        double a = ga(i, j);
        double denom = std::max(std::abs(a), std::abs(numeric));
        double rel;
        if (denom < 1e-10) {
          rel = 0.0;
          ++rep.zero_grad;
        } else {
          rel = std::abs(a - numeric) / std::max(denom, denom_floor);
        }
        ++rep.checked;
        if (rel >= rep.max_rel_err) {
          rep.max_rel_err = rel;
          rep.worst = {name, i, j, a, numeric, rel};
        }
      }
    }
  }
  return rep;
}

}  // namespace npv
