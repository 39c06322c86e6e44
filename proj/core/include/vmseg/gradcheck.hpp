#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vmseg/rng.hpp"
#include "vmseg/tensor.hpp"

namespace vmseg {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t checked = 0;
  std::string worst;  // "input 2 coord 17: analytic=..., fd=..."
  bool ok(double tol) const { return checked > 0 && max_rel_err < tol; }
};

// Central finite-difference oracle: rebuilds the forward through `loss_fn` with
// one coordinate nudged +/-eps and compares the slope against the analytic
// gradient from backward(). loss_fn must be a pure function of the given leaf
// tensors. Checks up to `max_coords` coordinates per input (all of them when
// the tensor is small), sampled deterministically from `rng`.
template <typename T, typename LossFn>
GradCheckReport grad_check(LossFn&& loss_fn, std::vector<Tensor<T>> inputs, Rng rng,
                           double eps = 1e-5, int64_t max_coords = 24) {
  for (auto& in : inputs) in.zero_grad();
  Tensor<T> loss = loss_fn();
  backward(loss);

  std::vector<std::vector<T>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) {
    auto g = in.grad();
    if (g.empty())
      analytic.emplace_back(size_t(in.numel()), T(0));
    else
      analytic.emplace_back(g.begin(), g.end());
  }

  GradCheckReport rep;
  for (size_t ii = 0; ii < inputs.size(); ++ii) {
    auto& in = inputs[ii];
    int64_t n = in.numel();
    std::vector<int64_t> coords;
    if (n <= max_coords) {
      coords.resize(size_t(n));
      for (int64_t i = 0; i < n; ++i) coords[size_t(i)] = i;
    } else {
      for (int64_t i = 0; i < max_coords; ++i) coords.push_back(rng.uniform_int(n));
    }
    auto data = in.mut_data();
    for (int64_t c : coords) {
      T saved = data[size_t(c)];
      data[size_t(c)] = saved + T(eps);
      double fp = double(loss_fn().item());
      data[size_t(c)] = saved - T(eps);
      double fm = double(loss_fn().item());
      data[size_t(c)] = saved;
      double fd = (fp - fm) / (2.0 * eps);
      double an = double(analytic[ii][size_t(c)]);
      if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) {
        ++rep.checked;
        continue;
      }
      double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      ++rep.checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = "input " + std::to_string(ii) + " coord " + std::to_string(c) +
                    ": analytic=" + std::to_string(an) + " fd=" + std::to_string(fd);
      }
    }
  }
  return rep;
}

}  // namespace vmseg
