#include "a2rnet/model.hpp"

#include <cmath>

#include "a2rnet/ops.hpp"
#include "a2rnet/rng.hpp"

namespace a2r {

void ModelParams::add(std::string name, Tensor t) {
  if (has(name)) throw ContractError("duplicate parameter name '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(t));
}

bool ModelParams::has(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return true;
  }
  return false;
}

const Tensor& ModelParams::at(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ContractError("unknown parameter '" + name + "'");
}

Tensor& ModelParams::at(const std::string& name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ContractError("unknown parameter '" + name + "'");
}

ModelParams ModelParams::detached() const {
  ModelParams out;
  out.init_seed = init_seed;
  for (const auto& [n, t] : entries_) {
    out.entries_.emplace_back(n, t.detached());
  }
  return out;
}

void validate_config(const NetworkConfig& cfg) {
  if (cfg.base_channels < 4 || cfg.base_channels % 4 != 0) {
    throw ValidationError("base_channels must be >= 4 and divisible by 4, got " +
                          std::to_string(cfg.base_channels));
  }
  const AttentionConfig& att = cfg.attention;
  if (att.taylor_order < 0 || att.taylor_order > 6) {
    throw ValidationError("taylor_order must lie in [0, 6], got " +
                          std::to_string(att.taylor_order));
  }
  if (att.d_s < 0.0) {
    throw ValidationError("d_s must be positive (or 0 for the default)");
  }
  if (att.sigma_mode == AttentionConfig::SigmaMode::fixed && att.sigma_fixed <= 0.0) {
    throw ValidationError("fixed sigma must be positive");
  }
}

namespace {

struct LayerSpec {
  std::string name;
  int c_out, c_in, k;
  Scalar gain;
};

// Uniform fan-in init bounds gain * sqrt(3 / fan_in): unit gain preserves
// variance through a linear layer; slope-corrected gain does the same under
// LeakyReLU(0.2); the attention projection uses a deliberately small gain
// because the even-power kernel features amplify outlier tokens quartically
// and a unit-gain projection saturates the context softmax.
constexpr Scalar kLinearGain = 1.0;
const Scalar kLeakyGain = std::sqrt(2.0 / (1.0 + 0.2 * 0.2));
constexpr Scalar kProjectionGain = 0.2;

// Single source of truth for the layer inventory; the initializer, the
// checkpoint validator, and forward() all derive from it.
std::vector<LayerSpec> layer_table(const NetworkConfig& cfg) {
  const int b = cfg.base_channels;
  std::vector<LayerSpec> table;
  int in_c = 2;
  for (int k = 1; k <= NetworkConfig::levels; ++k) {
    int w = b << (k - 1);
    std::string enc = "enc" + std::to_string(k);
    table.push_back({enc + ".conv1", w, in_c, 3, kLeakyGain});
    table.push_back({enc + ".conv2", w, w, 3, kLeakyGain});
    table.push_back({"down" + std::to_string(k), w, w, 3, kLinearGain});
    in_c = w;
  }
  table.push_back({"bottleneck.conv1", b * 16, b * 8, 3, kLeakyGain});
  table.push_back({"bottleneck.conv2", b * 16, b * 16, 3, kLeakyGain});
  int cur = b * 16;
  for (int k = 1; k <= NetworkConfig::levels; ++k) {
    int half = cur / 2;
    std::string dec = "dec" + std::to_string(k);
    table.push_back({dec + ".up", half * 4, cur, 1, kLinearGain});
    table.push_back({dec + ".conv1", half, half + half, 3, kLeakyGain});
    table.push_back({dec + ".conv2", half, half, 3, kLeakyGain});
    cur = half;
  }
  table.push_back({"head", 1, b, 1, kLinearGain});
  for (auto [tag, skip_w] : {std::pair<const char*, int>{"drm1", b}, {"drm3", b * 4}}) {
    int c = skip_w * 4;  // channel width inside the module, after unshuffle
    for (int j = 0; j < NetworkConfig::refinement_blocks; ++j) {
      std::string arb = std::string(tag) + ".arb" + std::to_string(j);
      table.push_back({arb + ".qkv", 3 * c, c, 1, kProjectionGain});
      table.push_back({arb + ".ffn1", 2 * c, c, 1, kLeakyGain});
      table.push_back({arb + ".ffn2", c, 2 * c, 3, kLinearGain});
    }
  }
  return table;
}

Tensor conv_block(const Tensor& x, const ModelParams& params, const std::string& name,
                  int stride, int pad) {
  const Tensor& w = params.at(name + ".weight");
  const Tensor& bias = params.at(name + ".bias");
  Tensor y = conv2d(x, w, stride, pad);
  Tensor b4 = reshape(bias, {1, w.dim(0), 1, 1});
  return add(y, broadcast_to(b4, y.shape()));
}

Tensor double_conv(const Tensor& x, const ModelParams& params, const std::string& prefix) {
  Tensor y = leaky_relu(conv_block(x, params, prefix + ".conv1", 1, 1), 0.2);
  return leaky_relu(conv_block(y, params, prefix + ".conv2", 1, 1), 0.2);
}

// max(x, floor) with subgradient 1 above the floor, composed from
// differentiable primitives.
Tensor clamp_min(const Tensor& x, Scalar floor) {
  return add(leaky_relu(add(x, -floor), 0.0), floor);
}

Tensor resolve_sigma(const Tensor& tokens, const AttentionConfig& cfg) {
  if (cfg.sigma_mode == AttentionConfig::SigmaMode::fixed) {
    return Tensor::scalar(std::max(cfg.sigma_fixed, cfg.sigma_floor));
  }
  return clamp_min(var(tokens), cfg.sigma_floor);
}

// 1 x c x h x w -> (h*w) x c token matrix and back.
Tensor to_tokens(const Tensor& x) {
  return transpose(reshape(x, {x.dim(1), x.dim(2) * x.dim(3)}));
}

Tensor from_tokens(const Tensor& tokens, int c, int h, int w) {
  return reshape(transpose(tokens), {1, c, h, w});
}

}  // namespace

ModelParams build_model(const NetworkConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  Rng rng(seed);
  ModelParams params;
  params.init_seed = seed;
  for (const LayerSpec& spec : layer_table(cfg)) {
    Scalar fan_in = static_cast<Scalar>(spec.c_in) * spec.k * spec.k;
    Scalar bound = spec.gain * std::sqrt(3.0 / fan_in);
    std::vector<Scalar> v(static_cast<std::size_t>(spec.c_out) * spec.c_in * spec.k * spec.k);
    for (Scalar& x : v) x = rng.uniform(-bound, bound);
    params.add(spec.name + ".weight",
               Tensor::from_values({spec.c_out, spec.c_in, spec.k, spec.k}, std::move(v),
                                   true));
    params.add(spec.name + ".bias", Tensor::zeros({spec.c_out}, true));
  }
  return params;
}

void validate_params(const ModelParams& params, const NetworkConfig& cfg) {
  validate_config(cfg);
  auto table = layer_table(cfg);
  std::size_t expected = 2 * table.size();
  if (params.size() != expected) {
    throw ValidationError("parameter count " + std::to_string(params.size()) +
                          " does not match the configured architecture (" +
                          std::to_string(expected) + " tensors)");
  }
  for (const LayerSpec& spec : table) {
    for (const auto& [suffix, shape] :
         {std::pair<const char*, Shape>{".weight", {spec.c_out, spec.c_in, spec.k, spec.k}},
          {".bias", {spec.c_out}}}) {
      std::string name = spec.name + suffix;
      if (!params.has(name)) {
        throw ValidationError("missing parameter '" + name + "'");
      }
      if (params.at(name).shape() != shape) {
        throw ValidationError("parameter '" + name + "' has shape " +
                              shape_str(params.at(name).shape()) + ", expected " +
                              shape_str(shape));
      }
    }
  }
}

Tensor channel_norm(const Tensor& x) {
  if (x.rank() != 4) {
    throw DimensionError("channel_norm: expects rank 4, got " + shape_str(x.shape()));
  }
  Tensor mu = reduce_mean(x, {2, 3}, true);
  Tensor centered = sub(x, broadcast_to(mu, x.shape()));
  Tensor v = reduce_mean(mul(centered, centered), {2, 3}, true);
  Tensor denom = pow(add(v, 1e-6), 0.5);
  return div(centered, broadcast_to(denom, x.shape()));
}

Tensor kernel_feature_map(const Tensor& tokens, const AttentionConfig& cfg) {
  if (tokens.rank() != 2) {
    throw DimensionError("kernel_feature_map: expects a rank-2 token matrix, got " +
                         shape_str(tokens.shape()));
  }
  int t = tokens.dim(0), c = tokens.dim(1);
  std::vector<Tensor> parts;
  parts.push_back(Tensor::full({t, c}, 1.0));
  if (cfg.taylor_order > 0) {
    Tensor mu = reduce_mean(tokens, {0}, true);
    Tensor centered = sub(tokens, broadcast_to(mu, tokens.shape()));
    Tensor sigma = resolve_sigma(tokens, cfg);
    Scalar factorial = 1.0;
    for (int i = 1; i <= cfg.taylor_order; ++i) {
      factorial *= static_cast<Scalar>(i);
      Tensor p = pow(centered, 2.0 * i);
      Tensor sig = broadcast_to(reshape(pow(sigma, -0.5 * i), {1, 1}), tokens.shape());
      parts.push_back(scale(mul(p, sig), 1.0 / std::sqrt(factorial)));
    }
  }
  return concat(parts, 1);
}

Tensor kernel_attention(const Tensor& f_in, const ModelParams& params,
                        const std::string& prefix, const AttentionConfig& cfg) {
  if (f_in.rank() != 4 || f_in.dim(0) != 1) {
    throw DimensionError("kernel_attention: expects 1 x c x h x w, got " +
                         shape_str(f_in.shape()));
  }
  int c = f_in.dim(1), h = f_in.dim(2), w = f_in.dim(3);
  int t = h * w;
  Tensor proj = conv_block(f_in, params, prefix + ".qkv", 1, 0);
  Tensor q = to_tokens(crop(proj, {0, 0, 0, 0}, {1, c, h, w}));
  Tensor k = to_tokens(crop(proj, {0, c, 0, 0}, {1, c, h, w}));
  Tensor v = to_tokens(crop(proj, {0, 2 * c, 0, 0}, {1, c, h, w}));

  Tensor mq = kernel_feature_map(q, cfg);
  Tensor mk = kernel_feature_map(k, cfg);

  Tensor out_tokens;
  switch (cfg.mode) {
    case AttentionConfig::Mode::softmax_context: {
      Tensor context = matmul(transpose(mk), v);  // expanded-dim x c
      Scalar ds = cfg.d_s > 0.0 ? cfg.d_s
                                : static_cast<Scalar>(c * (cfg.taylor_order + 1));
      Tensor s = softmax(scale(context, 1.0 / std::sqrt(ds)), 0);
      out_tokens = matmul(mq, s);
      break;
    }
    case AttentionConfig::Mode::phi_normalized: {
      Tensor kv = matmul(transpose(mk), v);
      Tensor num = matmul(mq, kv);
      Tensor mass = matmul(mq, matmul(transpose(mk), Tensor::full({t, 1}, 1.0)));
      Tensor den = add(mass, 1e-8);
      out_tokens = div(num, broadcast_to(den, num.shape()));
      break;
    }
    case AttentionConfig::Mode::dense_reference: {
      out_tokens = matmul(matmul(mq, transpose(mk)), v);
      break;
    }
  }
  return from_tokens(out_tokens, c, h, w);
}

Tensor arb_forward(const Tensor& f_in, const ModelParams& params,
                   const std::string& prefix, const AttentionConfig& cfg) {
  Tensor f = add(f_in, kernel_attention(channel_norm(f_in), params, prefix, cfg));
  Tensor g = channel_norm(f);
  Tensor ff = leaky_relu(conv_block(g, params, prefix + ".ffn1", 1, 0), 0.2);
  ff = conv_block(ff, params, prefix + ".ffn2", 1, 1);
  return add(f, ff);
}

Tensor drm_forward(const Tensor& skip, const ModelParams& params,
                   const std::string& prefix, const NetworkConfig& cfg) {
  if (skip.dim(2) % 2 != 0 || skip.dim(3) % 2 != 0) {
    throw DimensionError("refinement module requires even spatial extents, got " +
                         shape_str(skip.shape()));
  }
  Tensor x = pixel_unshuffle(skip, 2);
  for (int j = 0; j < NetworkConfig::refinement_blocks; ++j) {
    x = arb_forward(x, params, prefix + ".arb" + std::to_string(j), cfg.attention);
  }
  x = pixel_shuffle(x, 2);
  return add(x, skip);
}

Tensor forward_sources(const ModelParams& params, const Tensor& ir, const Tensor& vis_y,
                       const NetworkConfig& cfg) {
  if (ir.rank() != 4 || ir.dim(0) != 1 || ir.dim(1) != 1 || ir.shape() != vis_y.shape()) {
    throw DimensionError("forward: sources must share shape 1 x 1 x h x w, got " +
                         shape_str(ir.shape()) + " and " + shape_str(vis_y.shape()));
  }
  int h = ir.dim(2), w = ir.dim(3);
  if (h % 16 != 0 || w % 16 != 0) {
    throw DimensionError("forward: spatial extents " + std::to_string(h) + "x" +
                         std::to_string(w) +
                         " must be divisible by 16; pad inputs to a multiple of 16");
  }

  Tensor x = concat({ir, vis_y}, 1);
  Tensor e1 = double_conv(x, params, "enc1");
  Tensor x2 = conv_block(e1, params, "down1", 2, 1);
  Tensor e2 = double_conv(x2, params, "enc2");
  Tensor x3 = conv_block(e2, params, "down2", 2, 1);
  Tensor e3 = double_conv(x3, params, "enc3");
  Tensor x4 = conv_block(e3, params, "down3", 2, 1);
  Tensor e4 = double_conv(x4, params, "enc4");
  Tensor x5 = conv_block(e4, params, "down4", 2, 1);
  Tensor cur = double_conv(x5, params, "bottleneck");

  const Tensor* skips[4] = {&e4, &e3, &e2, &e1};
  for (int k = 1; k <= NetworkConfig::levels; ++k) {
    std::string dec = "dec" + std::to_string(k);
    Tensor up = pixel_shuffle(conv_block(cur, params, dec + ".up", 1, 0), 2);
    Tensor skip = *skips[k - 1];
    if (k == 2) skip = drm_forward(skip, params, "drm3", cfg);
    if (k == 4) skip = drm_forward(skip, params, "drm1", cfg);
    cur = double_conv(concat({up, skip}, 1), params, dec);
  }
  return sigmoid(conv_block(cur, params, "head", 1, 0));
}

Tensor forward(const ModelParams& params, const ImagePair& pair,
               const NetworkConfig& cfg) {
  return forward_sources(params, pair.ir, pair.vis_y, cfg);
}

}  // namespace a2r
