#include "a2rnet/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace a2r {

namespace {

Scalar eval_scalar(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tensor out = f(inputs);
  return out.value();
}

}  // namespace

Scalar grad_check(const ScalarFn& f, std::vector<Tensor> inputs, Scalar step) {
  if (!(step >= 1e-6 && step <= 1e-3)) {
    throw ContractError("grad_check: step " + std::to_string(step) +
                        " outside [1e-6, 1e-3]");
  }
  for (Tensor& t : inputs) {
    t.clear_grad();
    t.set_requires_grad(true);
  }

  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f(inputs);
    backward(loss);
  }

  std::vector<std::vector<Scalar>> analytic;
  analytic.reserve(inputs.size());
  for (Tensor& t : inputs) {
    if (t.has_grad()) {
      auto g = t.grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(t.size(), 0.0);
    }
  }

  NoTapeScope guard;
  Scalar worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto v = inputs[i].mutable_values();
    for (std::size_t j = 0; j < v.size(); ++j) {
      Scalar saved = v[j];
      v[j] = saved + step;
      Scalar plus = eval_scalar(f, inputs);
      v[j] = saved - step;
      Scalar minus = eval_scalar(f, inputs);
      v[j] = saved;
      Scalar numeric = (plus - minus) / (2.0 * step);
      Scalar a = analytic[i][j];
      Scalar denom = std::max({std::fabs(a), std::fabs(numeric), 1e-12});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

Scalar grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  Scalar step) {
  return grad_check(
      [&f](const std::vector<Tensor>& in) { return f(in[0]); }, {x}, step);
}

}  // namespace a2r
