#pragma once

#include <cstdint>
#include <string>

#include "a2rnet/image_io.hpp"
#include "a2rnet/tensor.hpp"

namespace a2r {

// Supervision target construction. analytic_max keeps the brighter source
// per pixel, analytic_weighted blends the sources with a fixed weight, and
// learned_cnn fits a small per-pair network to both sources under an
// l1 + SSIM objective and uses its inference output.
struct LabelRecipe {
  enum class Mode { analytic_max, analytic_weighted, learned_cnn };

  Mode mode = Mode::learned_cnn;
  Scalar w_ir = 0.5;       // analytic_weighted: weight on the infrared source
  std::uint64_t seed = 0;  // learned_cnn: initialization seed
  int epochs = 200;        // learned_cnn: optimization steps
  // When non-empty, labels are stored here as 8-bit PGMs (one per pair id,
  // plus a text index mapping id -> recipe hash). Cached generation snaps
  // the label onto the 8-bit grid before returning it, so a cache hit is
  // bit-identical to a fresh generation. Leave empty to disable caching and
  // keep exact analytic values.
  std::string cache_dir;
};

// w_ir must lie in [0,1]; learned_cnn needs epochs >= 1.
void validate_recipe(const LabelRecipe& recipe);

// Hash of the fields that determine label content (mode plus the blend
// weight or the seed/epochs, depending on the mode); the cache location does
// not contribute. 16 hex digits.
std::string recipe_hash(const LabelRecipe& recipe);

// Returns the 1 x 1 x h x w label for the pair; deterministic in
// (pair, recipe) and bounded in [0,1]. learned_cnn requires spatial extents
// of at least the SSIM window (11). A corrupt cache entry is regenerated
// with a warning on stderr.
Tensor generate_label(const ImagePair& pair, const LabelRecipe& recipe);

}  // namespace a2r
