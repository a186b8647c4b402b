#include "a2rnet/losses.hpp"

#include <cmath>

#include "a2rnet/ops.hpp"

namespace a2r {

namespace {

Tensor gaussian_window(int size, Scalar sigma) {
  std::vector<Scalar> w(static_cast<std::size_t>(size) * static_cast<std::size_t>(size));
  int c = size / 2;
  Scalar total = 0.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      Scalar d2 = static_cast<Scalar>((y - c) * (y - c) + (x - c) * (x - c));
      Scalar v = std::exp(-d2 / (2.0 * sigma * sigma));
      w[static_cast<std::size_t>(y * size + x)] = v;
      total += v;
    }
  }
  for (Scalar& v : w) v /= total;
  return Tensor::from_values({1, 1, size, size}, std::move(w));
}

void check_match(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  check_match(a, b, "mse_loss");
  Tensor d = sub(a, b);
  return mean(mul(d, d));
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
  check_match(a, b, "l1_loss");
  return mean(abs(sub(a, b)));
}

Tensor mean_ssim(const Tensor& a, const Tensor& b, const LossWeights& w) {
  check_match(a, b, "mean_ssim");
  if (a.rank() != 4 || a.dim(1) != 1) {
    throw DimensionError("mean_ssim: expects n x 1 x h x w, got " + shape_str(a.shape()));
  }
  if (a.dim(2) < w.ssim_window || a.dim(3) < w.ssim_window) {
    throw DimensionError("mean_ssim: image " + shape_str(a.shape()) +
                         " smaller than the " + std::to_string(w.ssim_window) +
                         "-pixel window");
  }
  Tensor win = gaussian_window(w.ssim_window, w.ssim_sigma);

  Tensor mu_a = conv2d(a, win, 1, 0);
  Tensor mu_b = conv2d(b, win, 1, 0);
  Tensor mu_aa = mul(mu_a, mu_a);
  Tensor mu_bb = mul(mu_b, mu_b);
  Tensor mu_ab = mul(mu_a, mu_b);
  Tensor var_a = sub(conv2d(mul(a, a), win, 1, 0), mu_aa);
  Tensor var_b = sub(conv2d(mul(b, b), win, 1, 0), mu_bb);
  Tensor cov = sub(conv2d(mul(a, b), win, 1, 0), mu_ab);

  Tensor num = mul(add(scale(mu_ab, 2.0), w.ssim_c1), add(scale(cov, 2.0), w.ssim_c2));
  Tensor den =
      mul(add(add(mu_aa, mu_bb), w.ssim_c1), add(add(var_a, var_b), w.ssim_c2));
  return mean(div(num, den));
}

Tensor base_loss(const Tensor& fused, const Tensor& label, const LossWeights& w) {
  check_match(fused, label, "base_loss");
  bool use_mse = w.beta != 0.0;
  bool use_ssim = w.gamma != 0.0;
  if (use_mse && use_ssim) {
    Tensor structural = sub(Tensor::scalar(1.0), mean_ssim(fused, label, w));
    return add(scale(mse_loss(fused, label), w.beta), scale(structural, w.gamma));
  }
  if (use_mse) return scale(mse_loss(fused, label), w.beta);
  if (use_ssim) {
    return scale(sub(Tensor::scalar(1.0), mean_ssim(fused, label, w)), w.gamma);
  }
  return Tensor::scalar(0.0);
}

Tensor anti_attack_loss(const Tensor& y_clean, const Tensor& y_adv, const Tensor& label,
                        const LossWeights& w) {
  return add(base_loss(y_clean, label, w), base_loss(y_adv, label, w));
}

}  // namespace a2r
