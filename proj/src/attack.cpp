#include "a2rnet/attack.hpp"

#include <algorithm>
#include <cmath>

#include "a2rnet/ops.hpp"
#include "a2rnet/rng.hpp"

namespace a2r {

void validate_budget(const PerturbationBudget& budget) {
  if (budget.epsilon < 0.0) {
    throw ValidationError("budget epsilon must be non-negative");
  }
  if (budget.epsilon > 0.0 &&
      (budget.alpha <= 0.0 || budget.alpha > budget.epsilon)) {
    throw ValidationError("budget requires 0 < alpha <= epsilon");
  }
  if (budget.iterations < 1) {
    throw ValidationError("budget requires at least one iteration");
  }
}

Tensor fgsm_delta(const Tensor& grad, Scalar epsilon) {
  std::vector<Scalar> out(grad.size());
  auto g = grad.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = g[i] > 0.0 ? epsilon : (g[i] < 0.0 ? -epsilon : 0.0);
  }
  return Tensor::from_values(grad.shape(), std::move(out));
}

Tensor project_linf(const Tensor& delta, const Tensor& x, const PerturbationBudget& budget) {
  if (delta.shape() != x.shape()) {
    throw DimensionError("project_linf: delta shape " + shape_str(delta.shape()) +
                         " does not match input shape " + shape_str(x.shape()));
  }
  auto dv = delta.values();
  auto xv = x.values();
  std::vector<Scalar> out(dv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Epsilon ball first, then the deltas that keep x + delta inside [0,1].
    // Clamping the delta against [-x, 1-x] (instead of clamping the sum and
    // subtracting) keeps the projection exactly idempotent in floating point.
    Scalar ball = std::clamp(dv[i], -budget.epsilon, budget.epsilon);
    out[i] = std::clamp(ball, -xv[i], 1.0 - xv[i]);
  }
  return Tensor::from_values(delta.shape(), std::move(out));
}

namespace {

void signed_step(std::vector<Scalar>& delta, const std::vector<Scalar>& grad, Scalar alpha) {
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (grad[i] > 0.0) {
      delta[i] += alpha;
    } else if (grad[i] < 0.0) {
      delta[i] -= alpha;
    }
  }
}

std::vector<Scalar> grad_or_zero(const Tensor& t) {
  if (!t.has_grad()) return std::vector<Scalar>(t.size(), 0.0);
  auto g = t.grad();
  return {g.begin(), g.end()};
}

}  // namespace

AdversarialPair pgd_attack_fn(const ForwardFn& fwd, const Tensor& ir, const Tensor& vis,
                              const Tensor& label, const PerturbationBudget& budget,
                              const LossWeights& weights) {
  validate_budget(budget);

  std::vector<Scalar> d_ir(ir.size(), 0.0), d_vis(vis.size(), 0.0);
  if (budget.random_start && budget.epsilon > 0.0) {
    Rng rng(budget.random_seed);
    for (Scalar& d : d_ir) d = rng.uniform(-budget.epsilon, budget.epsilon);
    for (Scalar& d : d_vis) d = rng.uniform(-budget.epsilon, budget.epsilon);
  }
  auto project = [&](std::vector<Scalar>& d, const Tensor& x) {
    Tensor projected = project_linf(Tensor::from_values(x.shape(), d), x, budget);
    auto pv = projected.values();
    d.assign(pv.begin(), pv.end());
  };
  project(d_ir, ir);
  project(d_vis, vis);

  AdversarialPair result;
  for (int k = 1; k <= budget.iterations; ++k) {
    Tensor t_ir = Tensor::from_values(ir.shape(), d_ir, true);
    Tensor t_vis = Tensor::from_values(vis.shape(), d_vis, true);
    std::vector<Scalar> g_ir, g_vis;
    {
      Tape tape;
      TapeScope scope(tape);
      Tensor loss = base_loss(fwd(add(ir, t_ir), add(vis, t_vis)), label, weights);
      Scalar lv = loss.value();
      if (!std::isfinite(lv)) {
        throw DomainError("pgd_attack: non-finite loss at iteration " + std::to_string(k));
      }
      result.loss_trace.push_back(lv);
      backward(loss);
      g_ir = grad_or_zero(t_ir);
      g_vis = grad_or_zero(t_vis);
    }
    signed_step(d_ir, g_ir, budget.alpha);
    signed_step(d_vis, g_vis, budget.alpha);
    project(d_ir, ir);
    project(d_vis, vis);
  }

  {
    NoTapeScope guard;
    Tensor adv_ir = add(ir, Tensor::from_values(ir.shape(), d_ir));
    Tensor adv_vis = add(vis, Tensor::from_values(vis.shape(), d_vis));
    Scalar lv = base_loss(fwd(adv_ir, adv_vis), label, weights).value();
    if (!std::isfinite(lv)) {
      throw DomainError("pgd_attack: non-finite loss at final evaluation");
    }
    result.loss_trace.push_back(lv);
  }

  result.delta_ir = Tensor::from_values(ir.shape(), std::move(d_ir));
  result.delta_vis = Tensor::from_values(vis.shape(), std::move(d_vis));
  return result;
}

AdversarialPair pgd_attack(const ModelParams& params, const ImagePair& pair,
                           const Tensor& label, const PerturbationBudget& budget,
                           const LossWeights& weights, const NetworkConfig& cfg) {
  if (label.shape() != pair.ir.shape()) {
    throw DimensionError("pgd_attack: label shape " + shape_str(label.shape()) +
                         " does not match the fused output shape " +
                         shape_str(pair.ir.shape()));
  }
  ModelParams frozen = params.detached();
  ForwardFn fwd = [&frozen, &cfg](const Tensor& a, const Tensor& b) {
    return forward_sources(frozen, a, b, cfg);
  };
  return pgd_attack_fn(fwd, pair.ir, pair.vis_y, label, budget, weights);
}

}  // namespace a2r
