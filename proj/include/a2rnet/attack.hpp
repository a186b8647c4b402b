#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "a2rnet/image_io.hpp"
#include "a2rnet/losses.hpp"
#include "a2rnet/model.hpp"
#include "a2rnet/tensor.hpp"

namespace a2r {

// l-infinity perturbation budget over the [0,1] pixel domain.
struct PerturbationBudget {
  Scalar epsilon = 4.0 / 255.0;
  Scalar alpha = 1.0 / 255.0;
  int iterations = 20;
  // Optional uniform start in [-epsilon, epsilon] (default off: deterministic
  // zero start, so loss_trace[0] is the clean loss).
  bool random_start = false;
  std::uint64_t random_seed = 0;
};

// epsilon == 0 is the allowed degenerate budget (attack becomes a no-op);
// otherwise requires 0 < alpha <= epsilon and iterations >= 1.
void validate_budget(const PerturbationBudget& budget);

// Attack result: per-modality perturbations plus the loss at every step.
// loss_trace[k] is the loss after k projected steps (size iterations + 1).
struct AdversarialPair {
  Tensor delta_ir;
  Tensor delta_vis;
  std::vector<Scalar> loss_trace;
};

// epsilon * sign(grad); the single-step attack direction.
Tensor fgsm_delta(const Tensor& grad, Scalar epsilon);

// Clamp delta into [-epsilon, epsilon], then clamp x + delta into [0,1] and
// return the implied delta. Idempotent; never leaves the domain.
Tensor project_linf(const Tensor& delta, const Tensor& x, const PerturbationBudget& budget);

// Differentiable two-input image mapping attacked by pgd_attack_fn.
using ForwardFn = std::function<Tensor(const Tensor& ir_adv, const Tensor& vis_adv)>;

// Projected-gradient ascent on base_loss(fwd(ir + d_ir, vis + d_vis), label):
// zero-initialized deltas, one loss evaluation per iteration, simultaneous
// signed alpha-steps on both modalities from that shared gradient, and an
// l-infinity + domain projection after every step. Deterministic; inputs are
// never mutated. Throws DomainError when the loss turns non-finite.
AdversarialPair pgd_attack_fn(const ForwardFn& fwd, const Tensor& ir, const Tensor& vis,
                              const Tensor& label, const PerturbationBudget& budget,
                              const LossWeights& weights);

// PGD against the fusion network; params are used read-only (detached), so no
// parameter gradients are produced or consumed.
AdversarialPair pgd_attack(const ModelParams& params, const ImagePair& pair,
                           const Tensor& label, const PerturbationBudget& budget,
                           const LossWeights& weights, const NetworkConfig& cfg);

}  // namespace a2r
