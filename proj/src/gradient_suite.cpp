#include <cmath>
#include <functional>
#include <utility>

#include "a2rnet/grad_check.hpp"
#include "a2rnet/losses.hpp"
#include "a2rnet/model.hpp"
#include "a2rnet/ops.hpp"
#include "a2rnet/rng.hpp"

namespace a2r {

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, Scalar lo = -1.0, Scalar hi = 1.0) {
  std::vector<Scalar> v(numel(shape));
  for (Scalar& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), std::move(v));
}

// Magnitudes in [0.2, 1] with random sign: keeps kinked maps (abs, leaky
// relu, l1) away from their non-differentiable point at every FD step.
Tensor rand_signed(Shape shape, Rng& rng) {
  std::vector<Scalar> v(numel(shape));
  for (Scalar& x : v) x = rng.uniform(0.2, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  return Tensor::from_values(std::move(shape), std::move(v));
}

// Fixed random linear functional; rebuilt from the seed on every call so the
// analytic pass and each FD evaluation see identical weights.
Tensor readout(const Tensor& y, std::uint64_t wseed) {
  Rng local(wseed);
  std::vector<Scalar> w(y.size());
  for (Scalar& x : w) x = local.uniform(-1.0, 1.0);
  return sum(mul(y, Tensor::from_values(y.shape(), std::move(w))));
}

using CheckFn = std::function<Scalar(std::uint64_t)>;

GradSuiteEntry run_case(std::string name, Scalar tol, int seeds, std::uint64_t base,
                        const CheckFn& fn) {
  GradSuiteEntry entry;
  entry.name = std::move(name);
  entry.tolerance = tol;
  for (int s = 0; s < seeds; ++s) {
    entry.max_rel_err = std::max(entry.max_rel_err, fn(base + static_cast<std::uint64_t>(s)));
  }
  entry.pass = entry.max_rel_err <= tol;
  return entry;
}

CheckFn unary(std::function<Tensor(const Tensor&)> op, bool away_from_zero = false) {
  return [op = std::move(op), away_from_zero](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = away_from_zero ? rand_signed({2, 3, 4}, rng) : rand_tensor({2, 3, 4}, rng);
    const std::uint64_t wseed = seed ^ 0x5bf03635ULL;
    return grad_check(
        [&op, wseed](const std::vector<Tensor>& in) { return readout(op(in[0]), wseed); },
        {x});
  };
}

CheckFn binary(std::function<Tensor(const Tensor&, const Tensor&)> op,
               bool safe_denominator = false) {
  return [op = std::move(op), safe_denominator](std::uint64_t seed) {
    Rng rng(seed);
    Tensor a = rand_tensor({2, 3, 4}, rng);
    Tensor b;
    if (safe_denominator) {
      std::vector<Scalar> v(24);
      for (Scalar& x : v) x = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      b = Tensor::from_values({2, 3, 4}, std::move(v));
    } else {
      b = rand_tensor({2, 3, 4}, rng);
    }
    const std::uint64_t wseed = seed ^ 0x2545f491ULL;
    return grad_check(
        [&op, wseed](const std::vector<Tensor>& in) {
          return readout(op(in[0], in[1]), wseed);
        },
        {a, b});
  };
}

// Projection parameters for one attention block over c channels.
struct QkvInputs {
  Tensor weight, bias;
};

QkvInputs make_qkv(int c, Rng& rng) {
  const Scalar bound = 0.2 * std::sqrt(3.0 / c);
  return {rand_tensor({3 * c, c, 1, 1}, rng, -bound, bound),
          rand_tensor({3 * c}, rng, -0.05, 0.05)};
}

AttentionConfig attention_cfg(AttentionConfig::Mode mode) {
  AttentionConfig cfg;
  cfg.mode = mode;
  return cfg;
}

CheckFn attention_case(AttentionConfig::Mode mode) {
  return [mode](std::uint64_t seed) {
    Rng rng(seed);
    const int c = 4;
    Tensor f = rand_tensor({1, c, 4, 4}, rng, -0.8, 0.8);
    QkvInputs qkv = make_qkv(c, rng);
    const AttentionConfig cfg = attention_cfg(mode);
    return grad_check(
        [&cfg](const std::vector<Tensor>& in) {
          ModelParams p;
          p.add("blk.qkv.weight", in[1]);
          p.add("blk.qkv.bias", in[2]);
          return readout(kernel_attention(in[0], p, "blk", cfg), 77);
        },
        {f, qkv.weight, qkv.bias});
  };
}

CheckFn arb_case(AttentionConfig::Mode mode) {
  return [mode](std::uint64_t seed) {
    Rng rng(seed);
    const int c = 4;
    Tensor f = rand_tensor({1, c, 4, 4}, rng, -0.8, 0.8);
    QkvInputs qkv = make_qkv(c, rng);
    Tensor ffn1_w = rand_tensor({2 * c, c, 1, 1}, rng, -0.5, 0.5);
    Tensor ffn1_b = rand_tensor({2 * c}, rng, -0.05, 0.05);
    Tensor ffn2_w = rand_tensor({c, 2 * c, 3, 3}, rng, -0.2, 0.2);
    Tensor ffn2_b = rand_tensor({c}, rng, -0.05, 0.05);
    const AttentionConfig cfg = attention_cfg(mode);
    return grad_check(
        [&](const std::vector<Tensor>& in) {
          ModelParams p;
          p.add("blk.qkv.weight", in[1]);
          p.add("blk.qkv.bias", in[2]);
          p.add("blk.ffn1.weight", in[3]);
          p.add("blk.ffn1.bias", in[4]);
          p.add("blk.ffn2.weight", ffn2_w);
          p.add("blk.ffn2.bias", ffn2_b);
          return readout(arb_forward(in[0], p, "blk", cfg), 78);
        },
        {f, qkv.weight, qkv.bias, ffn1_w, ffn1_b});
  };
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed) {
  std::vector<GradSuiteEntry> entries;
  auto op_case = [&](const char* name, const CheckFn& fn, int seeds = 20,
                     Scalar tol = 1e-4) {
    entries.push_back(run_case(name, tol, seeds, seed, fn));
  };

  op_case("add", binary([](const Tensor& a, const Tensor& b) { return add(a, b); }));
  op_case("add scalar", unary([](const Tensor& a) { return add(a, 0.37); }));
  op_case("sub", binary([](const Tensor& a, const Tensor& b) { return sub(a, b); }));
  op_case("mul", binary([](const Tensor& a, const Tensor& b) { return mul(a, b); }));
  op_case("div", binary([](const Tensor& a, const Tensor& b) { return div(a, b); }, true));
  op_case("scale", unary([](const Tensor& a) { return scale(a, -1.7); }));
  op_case("neg", unary([](const Tensor& a) { return neg(a); }));
  op_case("abs", unary([](const Tensor& a) { return abs(a); }, true));
  // sign is the one non-differentiable map (gradient-blocking by design for
  // the attack step) and is deliberately absent here.
  op_case("leaky_relu", unary([](const Tensor& a) { return leaky_relu(a, 0.2); }, true));
  op_case("sigmoid", unary([](const Tensor& a) { return sigmoid(a); }));
  op_case("pow", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = rand_tensor({2, 3, 4}, rng, 0.3, 1.3);
    return grad_check(
        [](const std::vector<Tensor>& in) { return readout(pow(in[0], 1.7), 80); }, {x});
  });
  op_case("reshape", unary([](const Tensor& a) { return reshape(a, {4, 6}); }));
  op_case("transpose", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = rand_tensor({3, 5}, rng);
    return grad_check(
        [](const std::vector<Tensor>& in) { return readout(transpose(in[0]), 81); }, {x});
  });
  op_case("broadcast_to", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = rand_tensor({2, 1, 4}, rng);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return readout(broadcast_to(in[0], {2, 3, 4}), 82);
        },
        {x});
  });
  op_case("concat", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = rand_tensor({2, 1, 3}, rng);
    Tensor b = rand_tensor({2, 2, 3}, rng);
    Tensor c = rand_tensor({2, 1, 3}, rng);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return readout(concat({in[0], in[1], in[2]}, 1), 83);
        },
        {a, b, c});
  });
  op_case("crop", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = rand_tensor({1, 3, 6, 6}, rng);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return readout(crop(in[0], {0, 1, 2, 1}, {1, 2, 3, 4}), 84);
        },
        {x});
  });
  op_case("reduce_sum", unary([](const Tensor& a) { return reduce_sum(a, {1}, true); }));
  op_case("reduce_mean", unary([](const Tensor& a) { return reduce_mean(a, {0, 2}); }));
  op_case("reduce_var", unary([](const Tensor& a) { return reduce_var(a, {2}); }));
  op_case("sum", unary([](const Tensor& a) { return sum(a); }));
  op_case("mean", unary([](const Tensor& a) { return mean(a); }));
  op_case("var", unary([](const Tensor& a) { return var(a); }));
  op_case("softmax", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = rand_tensor({3, 5}, rng, -2.0, 2.0);
    return grad_check(
        [](const std::vector<Tensor>& in) { return readout(softmax(in[0], 1), 85); }, {x});
  });
  op_case("matmul", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = rand_tensor({3, 4}, rng);
    Tensor b = rand_tensor({4, 2}, rng);
    return grad_check(
        [](const std::vector<Tensor>& in) { return readout(matmul(in[0], in[1]), 86); },
        {a, b});
  });
  op_case("conv2d", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = rand_tensor({1, 2, 5, 5}, rng);
    Tensor k = rand_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return readout(conv2d(in[0], in[1], 1, 1), 87);
        },
        {x, k});
  });
  op_case("conv2d stride 2", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = rand_tensor({1, 2, 6, 6}, rng);
    Tensor k = rand_tensor({2, 2, 3, 3}, rng, -0.5, 0.5);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return readout(conv2d(in[0], in[1], 2, 1), 88);
        },
        {x, k});
  });
  op_case("pixel_shuffle", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = rand_tensor({1, 8, 2, 3}, rng);
    return grad_check(
        [](const std::vector<Tensor>& in) { return readout(pixel_shuffle(in[0], 2), 89); },
        {x});
  });
  op_case("pixel_unshuffle", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = rand_tensor({1, 2, 4, 6}, rng);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return readout(pixel_unshuffle(in[0], 2), 90);
        },
        {x});
  });
  op_case("mse_loss", binary([](const Tensor& a, const Tensor& b) {
    return mse_loss(a, b);
  }));
  op_case("l1_loss", [](std::uint64_t s) {
    // Keep |a - b| well above the FD step so no coordinate crosses the kink.
    Rng rng(s);
    Tensor a = rand_tensor({2, 3, 4}, rng, 0.0, 1.0);
    std::vector<Scalar> v(a.values().begin(), a.values().end());
    for (Scalar& x : v) x += rng.uniform(0.05, 0.3) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    Tensor b = Tensor::from_values({2, 3, 4}, std::move(v));
    return grad_check(
        [](const std::vector<Tensor>& in) { return l1_loss(in[0], in[1]); }, {a, b});
  });

  op_case("channel_norm", [](std::uint64_t s) {
    Rng rng(s);
    Tensor x = rand_tensor({1, 3, 4, 4}, rng);
    return grad_check(
        [](const std::vector<Tensor>& in) { return readout(channel_norm(in[0]), 91); },
        {x});
  }, 5);
  op_case("kernel_feature_map", [](std::uint64_t s) {
    Rng rng(s);
    Tensor tokens = rand_tensor({6, 3}, rng, -0.8, 0.8);
    AttentionConfig cfg;
    cfg.taylor_order = 3;
    return grad_check(
        [&cfg](const std::vector<Tensor>& in) {
          return readout(kernel_feature_map(in[0], cfg), 92);
        },
        {tokens});
  }, 5);
  op_case("attention (context softmax)",
          attention_case(AttentionConfig::Mode::softmax_context), 3);
  op_case("attention (phi normalized)",
          attention_case(AttentionConfig::Mode::phi_normalized), 3);
  op_case("residual attention block (context softmax)",
          arb_case(AttentionConfig::Mode::softmax_context), 3);
  op_case("residual attention block (phi normalized)",
          arb_case(AttentionConfig::Mode::phi_normalized), 3);
  op_case("refinement module", [](std::uint64_t s) {
    NetworkConfig cfg;
    cfg.base_channels = 4;
    ModelParams params = build_model(cfg, s);
    Rng rng(s ^ 0x9e37ULL);
    Tensor x = rand_tensor({1, 4, 4, 4}, rng, -0.8, 0.8);
    return grad_check(
        [&params, &cfg](const std::vector<Tensor>& in) {
          return readout(drm_forward(in[0], params, "drm1", cfg), 93);
        },
        {x});
  }, 2);
  op_case("mean_ssim", [](std::uint64_t s) {
    Rng rng(s);
    Tensor a = rand_tensor({1, 1, 12, 12}, rng, 0.0, 1.0);
    Tensor b = rand_tensor({1, 1, 12, 12}, rng, 0.0, 1.0);
    // Window averaging makes per-pixel sensitivities ~1e-4, so central
    // differences need the larger step to keep cancellation noise in check.
    return grad_check(
        [](const std::vector<Tensor>& in) { return mean_ssim(in[0], in[1]); }, {a, b},
        1e-3);
  }, 5);
  op_case("base_loss", [](std::uint64_t s) {
    Rng rng(s);
    Tensor fused = rand_tensor({1, 1, 12, 12}, rng, 0.0, 1.0);
    Tensor label = rand_tensor({1, 1, 12, 12}, rng, 0.0, 1.0);
    return grad_check(
        [](const std::vector<Tensor>& in) { return base_loss(in[0], in[1]); },
        {fused, label});
  }, 3);
  op_case("anti_attack_loss", [](std::uint64_t s) {
    Rng rng(s);
    Tensor y_clean = rand_tensor({1, 1, 12, 12}, rng, 0.0, 1.0);
    Tensor y_adv = rand_tensor({1, 1, 12, 12}, rng, 0.0, 1.0);
    Tensor label = rand_tensor({1, 1, 12, 12}, rng, 0.0, 1.0);
    return grad_check(
        [](const std::vector<Tensor>& in) {
          return anti_attack_loss(in[0], in[1], in[2]);
        },
        {y_clean, y_adv, label});
  }, 3);
  op_case("network forward", [](std::uint64_t s) {
    NetworkConfig cfg;
    cfg.base_channels = 4;
    ModelParams params = build_model(cfg, s);
    Rng rng(s ^ 0x517cc1ULL);
    Tensor ir = rand_tensor({1, 1, 16, 16}, rng, 0.0, 1.0);
    Tensor vis = rand_tensor({1, 1, 16, 16}, rng, 0.0, 1.0);
    Tensor half = Tensor::full({1, 1, 16, 16}, 0.5);
    return grad_check(
        [&params, &cfg, &half](const std::vector<Tensor>& in) {
          return mse_loss(forward_sources(params, in[0], in[1], cfg), half);
        },
        {ir, vis});
  }, 1, 1e-3);

  return entries;
}

}  // namespace a2r
