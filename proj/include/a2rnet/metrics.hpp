#pragma once

#include <optional>
#include <string>
#include <vector>

#include "a2rnet/attack.hpp"
#include "a2rnet/image_io.hpp"
#include "a2rnet/labels.hpp"
#include "a2rnet/model.hpp"
#include "a2rnet/tensor.hpp"

namespace a2r {

// Shannon entropy in bits of the 256-bin histogram after 8-bit quantization.
// Zero-probability bins contribute nothing; range [0, 8].
Scalar entropy(const Tensor& img);

// Population standard deviation over all values.
Scalar std_dev(const Tensor& img);

// 10*log10(1/mse) dB against a unit dynamic range, capped at 100 dB when the
// mean squared error drops below 1e-10. Shapes must match.
Scalar psnr(const Tensor& fused, const Tensor& ref);

// Centered normalized covariance in [-1, 1]. A constant input has no defined
// correlation and raises DomainError.
Scalar pearson_r(const Tensor& a, const Tensor& b);

// Mean of the fused image's correlation with each source.
Scalar cc(const Tensor& fused, const Tensor& ir, const Tensor& vis);

// Sum of the correlations of differences: corr(fused - vis, ir) +
// corr(fused - ir, vis). Constant difference images raise DomainError.
Scalar scd(const Tensor& fused, const Tensor& ir, const Tensor& vis);

// Column-mean waveform of a 1 x 1 x h x w image; length equals the width.
struct SignalMap {
  std::vector<Scalar> waveform;
};

SignalMap signal_map(const Tensor& fused);

// Root-mean-square difference between two waveforms of equal length.
Scalar waveform_distance(const SignalMap& a, const SignalMap& b);

// One report row per (pair, condition). Correlation cells are empty when the
// underlying Pearson correlation is undefined (constant inputs); such cells
// serialize as NA and are excluded from aggregates.
struct MetricsRow {
  std::string id;
  std::string condition;  // "clean" or "attacked"
  Scalar en = 0.0;
  Scalar sd = 0.0;
  Scalar psnr_ir = 0.0;
  Scalar psnr_vis = 0.0;
  Scalar psnr_mean = 0.0;
  std::optional<Scalar> cc;
  std::optional<Scalar> scd;
  Scalar signal_distance = 0.0;  // clean-vs-attacked waveform distance
};

struct MetricsReport {
  std::vector<MetricsRow> rows;

  // CSV with the fixed column order id, condition, EN, SD, PSNR_ir,
  // PSNR_vis, PSNR_mean, CC, SCD, signal_distance.
  std::string to_csv() const;
  // Per-condition mean/stddev per numeric column plus flagged-cell counts.
  std::string aggregate_json() const;
};

// Full robustness evaluation: for every manifest pair, fuse the clean pair,
// attack it with the evaluation budget, fuse the attacked inputs, and meter
// both fused images (quantized exactly as saved, so recomputation from the
// written PGMs reproduces every cell). Writes under out_dir: report.csv,
// aggregate.json, fused/<id>_<condition>.pgm, and per-pair waveform CSVs
// waveforms/<id>.csv. Deterministic, byte-identical across reruns.
MetricsReport evaluate(const std::string& checkpoint_path, const DatasetManifest& manifest,
                       const NetworkConfig& net, const PerturbationBudget& budget,
                       const LabelRecipe& recipe, const LossWeights& weights,
                       const std::string& out_dir);

}  // namespace a2r
