#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "a2rnet/tensor.hpp"

namespace a2r {

// Scalar-valued function of a set of input tensors. Called once under a
// recording tape for the analytic pass and repeatedly with recording
// suppressed for the finite-difference passes.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Central-difference gradient verification. Perturbs every coordinate of
// every input by ±step, compares against the reverse-mode gradient, and
// returns the worst relative error with denominator
// max(|analytic|, |numeric|, 1e-12). Step must lie in [1e-6, 1e-3].
Scalar grad_check(const ScalarFn& f, std::vector<Tensor> inputs, Scalar step = 1e-4);

// Single-input convenience wrapper.
Scalar grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  Scalar step = 1e-4);

struct GradSuiteEntry {
  std::string name;
  Scalar max_rel_err = 0.0;
  Scalar tolerance = 0.0;
  bool pass = false;
};

// Gradient checks for every differentiable primitive and the composite
// blocks (attention block, refinement module, full network forward, SSIM and
// the training losses). Each primitive is exercised over several random
// shapes and seeds. Entries report the worst relative error observed.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed = 20240817);

}  // namespace a2r
