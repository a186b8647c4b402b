#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "a2rnet/image_io.hpp"
#include "a2rnet/tensor.hpp"

namespace a2r {

// Linearized kernel self-attention settings. The feature map expands every
// channel value q into (n+1) features: 1 and (q - mean)^(2i) / (sigma^(i/2)
// sqrt(i!)) for i = 1..n, so inner products of mapped vectors evaluate the
// truncated kernel series.
struct AttentionConfig {
  enum class SigmaMode { per_tensor_variance, fixed };
  // softmax_context: multiplies K-features with V first (linear in token
  //   count) and softmaxes the scaled context matrix along its feature axis.
  // phi_normalized: kernel-weighted average of V rows, normalized by the
  //   kernel mass m(Q) (m(K)^T 1) + 1e-8.
  // dense_reference: materializes the full token-by-token attention matrix;
  //   quadratic, for associativity testing only.
  enum class Mode { softmax_context, phi_normalized, dense_reference };

  int taylor_order = 2;  // n: number of non-constant feature-map terms
  SigmaMode sigma_mode = SigmaMode::per_tensor_variance;
  Scalar sigma_fixed = 1.0;
  Scalar sigma_floor = 1e-6;
  Scalar d_s = 0.0;  // softmax scaling; 0 resolves to the expanded dim c*(n+1)
  Mode mode = Mode::softmax_context;
};

struct NetworkConfig {
  int base_channels = 16;  // must be >= 4 and divisible by 4
  static constexpr int levels = 4;
  static constexpr int refinement_blocks = 5;
  AttentionConfig attention;
};

// Ordered name -> tensor collection. Iteration follows insertion order, which
// fixes initialization draws, optimizer traversal, and checkpoint layout.
class ModelParams {
 public:
  void add(std::string name, Tensor t);
  bool has(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Shares value buffers but drops gradient state; used to freeze parameters
  // during attack generation.
  ModelParams detached() const;

  std::uint64_t init_seed = 0;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

void validate_config(const NetworkConfig& cfg);

// Deterministic initialization: uniform conv kernels with bound
// gain * sqrt(3 / fan_in), zero biases. The gain is role dependent: slope
// corrected for kernels feeding LeakyReLU, 1 for linear outputs, and a small
// damping factor for the attention projections (their feature map raises
// centered values to high powers, which amplifies any outlier). Identical
// (cfg, seed) inputs yield bit-identical parameters; all parameters are
// created trainable.
ModelParams build_model(const NetworkConfig& cfg, std::uint64_t seed);

// Shape/name compatibility check for loaded checkpoints.
void validate_params(const ModelParams& params, const NetworkConfig& cfg);

// Per-channel spatial standardization (mean 0, variance 1 over h x w,
// epsilon 1e-6); unparameterized.
Tensor channel_norm(const Tensor& x);

// Truncated kernel feature map over a token matrix [tokens x channels];
// output is [tokens x channels*(n+1)].
Tensor kernel_feature_map(const Tensor& tokens, const AttentionConfig& cfg);

// Self-attention over 1 x c x h x w features (see AttentionConfig::Mode).
Tensor kernel_attention(const Tensor& f_in, const ModelParams& params,
                        const std::string& prefix, const AttentionConfig& cfg);

// Residual attention + feed-forward block; shape preserving.
Tensor arb_forward(const Tensor& f_in, const ModelParams& params,
                   const std::string& prefix, const AttentionConfig& cfg);

// Skip-connection refinement: pixel_unshuffle(2), five residual attention
// blocks, pixel_shuffle(2), plus a global residual. Requires even spatial
// extents.
Tensor drm_forward(const Tensor& skip, const ModelParams& params,
                   const std::string& prefix, const NetworkConfig& cfg);

// Full fusion forward over explicit source tensors (each 1 x 1 x h x w with
// h, w divisible by 16). Output is 1 x 1 x h x w in (0, 1).
Tensor forward_sources(const ModelParams& params, const Tensor& ir, const Tensor& vis_y,
                       const NetworkConfig& cfg);

Tensor forward(const ModelParams& params, const ImagePair& pair, const NetworkConfig& cfg);

// Checkpoint container: magic "A2RN", then little-endian version, tensor
// count, and per tensor name, rank, dims, and raw f64 payload. Round trips
// bit-exactly.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace a2r
