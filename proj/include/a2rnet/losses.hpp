#pragma once

#include "a2rnet/tensor.hpp"

namespace a2r {

// Weights and SSIM parameters for the supervised fusion loss
// beta * MSE + gamma * (1 - SSIM). Dynamic range is 1 (inputs normalized).
struct LossWeights {
  Scalar beta = 100.0;
  Scalar gamma = 100.0;
  int ssim_window = 11;
  Scalar ssim_sigma = 1.5;
  Scalar ssim_c1 = 0.01 * 0.01;
  Scalar ssim_c2 = 0.03 * 0.03;
};

// Mean of squared differences.
Tensor mse_loss(const Tensor& a, const Tensor& b);

// Mean absolute error.
Tensor l1_loss(const Tensor& a, const Tensor& b);

// Mean structural similarity index over the valid (unpadded) window
// positions, Gaussian window w.ssim_window x w.ssim_window with sigma
// w.ssim_sigma. Inputs are n x 1 x h x w with h, w >= window. Differentiable;
// range [-1, 1].
Tensor mean_ssim(const Tensor& a, const Tensor& b, const LossWeights& w = {});

// beta * mse + gamma * (1 - ssim). A term with weight zero is skipped
// entirely, so gamma == 0 imposes no minimum image size.
Tensor base_loss(const Tensor& fused, const Tensor& label, const LossWeights& w = {});

// Sum of the clean-branch and adversarial-branch base losses; gradients flow
// through both branches.
Tensor anti_attack_loss(const Tensor& y_clean, const Tensor& y_adv, const Tensor& label,
                        const LossWeights& w = {});

}  // namespace a2r
