#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "a2rnet/tensor.hpp"

namespace a2r {

// Registered infrared + visible pair, luminance in [0,1]. The chroma planes
// are kept only for recombining a fused luminance into a color output; they
// are empty when the visible source is grayscale.
struct ImagePair {
  Tensor ir;        // 1 x 1 x h x w
  Tensor vis_y;     // 1 x 1 x h x w
  Tensor vis_cbcr;  // 1 x 2 x h x w, or empty
  std::string id;

  bool has_color() const { return !vis_cbcr.empty(); }
};

struct ManifestEntry {
  std::string id;
  std::string ir_path;
  std::string vis_path;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::string root;

  std::size_t size() const { return entries.size(); }
};

// 8-bit quantization used for every image write: clamp to [0,1] and round
// half away from zero.
inline std::uint8_t quantize8(Scalar v) {
  if (v <= 0.0) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

// Snaps every value onto the 8-bit reconstruction grid k/255. Applying this
// before saving makes save/load a bit-exact round trip.
Tensor quantize_unit(const Tensor& t);

// Binary PGM (P5), maxval 255. Loading divides by 255; saving quantizes per
// quantize8. Malformed input raises a format error naming the byte offset.
Tensor load_pgm(const std::string& path);
void save_pgm(const std::string& path, const Tensor& t);

// Binary PPM (P6), maxval 255, ITU-R BT.601 full-range conversion. Returns
// luminance (1x1xhxw) and chroma (1x2xhxw, planes Cb then Cr). Recombining
// clamps to [0,1] before quantization.
std::pair<Tensor, Tensor> load_ppm_as_ycbcr(const std::string& path);
void recombine_to_ppm(const std::string& path, const Tensor& y, const Tensor& cbcr);

// Text manifest: one `id, ir_path, vis_path` entry per line, '#' starts a
// comment. Relative paths resolve against the manifest's directory. Duplicate
// ids and missing files raise validation errors naming the line number.
DatasetManifest load_manifest(const std::string& path);

// Loads one manifest entry. The visible image may be PGM (grayscale) or PPM
// (color, fused on luminance). The two images must agree on h x w.
ImagePair load_pair(const ManifestEntry& entry);

}  // namespace a2r
