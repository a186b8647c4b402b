#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "a2rnet/image_io.hpp"
#include "a2rnet/rng.hpp"
#include "a2rnet/tensor.hpp"

namespace a2r::testing {

// Deterministic registered scene: the infrared channel shows hot blobs on a
// dark background, the visible channel a smooth illumination ramp with
// stripe texture and the same objects as faint edges. Values land on the
// 8-bit grid so a save/load round trip through PGM is bit-exact.
inline ImagePair synthetic_pair(std::uint64_t seed, int h, int w, std::string id) {
  Rng rng(seed);
  struct Blob {
    Scalar cy, cx, r, heat;
  };
  std::vector<Blob> blobs;
  const int n_blobs = 2 + static_cast<int>(rng.index(3));
  for (int b = 0; b < n_blobs; ++b) {
    blobs.push_back({rng.uniform(0.15, 0.85) * h, rng.uniform(0.15, 0.85) * w,
                     rng.uniform(0.08, 0.22) * std::min(h, w), rng.uniform(0.55, 0.95)});
  }
  const Scalar ramp_dir = rng.uniform(0.0, 1.0);
  const Scalar stripe_period = rng.uniform(4.0, 9.0);
  const Scalar stripe_amp = rng.uniform(0.04, 0.12);
  const Scalar base_ir = rng.uniform(0.04, 0.12);
  const Scalar base_vis = rng.uniform(0.25, 0.45);

  std::vector<Scalar> ir(static_cast<std::size_t>(h) * w);
  std::vector<Scalar> vis(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      Scalar hot = 0.0;
      Scalar edge = 0.0;
      for (const Blob& b : blobs) {
        const Scalar d2 = (y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx);
        const Scalar g = std::exp(-d2 / (2.0 * b.r * b.r));
        hot = std::max(hot, b.heat * g);
        if (g > 0.1) edge = std::max(edge, 0.25 * std::fabs(g - std::exp(-0.5)));
      }
      const Scalar ramp = ramp_dir * (static_cast<Scalar>(y) / std::max(1, h - 1)) +
                          (1.0 - ramp_dir) * (static_cast<Scalar>(x) / std::max(1, w - 1));
      const Scalar stripes = stripe_amp * std::sin(2.0 * M_PI * x / stripe_period);
      ir[static_cast<std::size_t>(y) * w + x] = std::clamp(base_ir + hot, 0.0, 1.0);
      vis[static_cast<std::size_t>(y) * w + x] =
          std::clamp(base_vis + 0.35 * ramp + stripes + edge, 0.0, 1.0);
    }
  }
  ImagePair pair;
  pair.ir = quantize_unit(Tensor::from_values({1, 1, h, w}, std::move(ir)));
  pair.vis_y = quantize_unit(Tensor::from_values({1, 1, h, w}, std::move(vis)));
  pair.id = std::move(id);
  return pair;
}

inline std::vector<ImagePair> synthetic_dataset(std::uint64_t seed, int n, int h, int w) {
  std::vector<ImagePair> pairs;
  pairs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    pairs.push_back(synthetic_pair(seed + static_cast<std::uint64_t>(i) * 1000003ULL, h, w,
                                   "s" + std::to_string(i)));
  }
  return pairs;
}

// Writes the pairs as PGMs plus a manifest and returns the loaded manifest.
inline DatasetManifest write_synthetic_dataset(const std::string& dir, std::uint64_t seed,
                                               int n, int h, int w) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir + "/manifest.txt");
  for (const ImagePair& pair : synthetic_dataset(seed, n, h, w)) {
    const std::string ir_name = pair.id + "_ir.pgm";
    const std::string vis_name = pair.id + "_vis.pgm";
    save_pgm(dir + "/" + ir_name, pair.ir);
    save_pgm(dir + "/" + vis_name, pair.vis_y);
    manifest << pair.id << ", " << ir_name << ", " << vis_name << "\n";
  }
  manifest.close();
  return load_manifest(dir + "/manifest.txt");
}

}  // namespace a2r::testing
