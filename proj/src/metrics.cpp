#include "a2rnet/metrics.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "a2rnet/ops.hpp"
#include "a2rnet/train.hpp"
#include "json.hpp"

namespace a2r {

namespace {

namespace fs = std::filesystem;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  if (a.empty()) throw DimensionError(std::string(op) + ": empty input");
}

Scalar mean_of(std::span<const Scalar> v) {
  Scalar s = 0.0;
  for (Scalar x : v) s += x;
  return s / static_cast<Scalar>(v.size());
}

// Sum of squared deviations; exactly zero for a constant input.
Scalar ssd_about(std::span<const Scalar> v, Scalar mean) {
  Scalar s = 0.0;
  for (Scalar x : v) s += (x - mean) * (x - mean);
  return s;
}

bool is_constant(std::span<const Scalar> v) {
  for (Scalar x : v) {
    if (x != v[0]) return false;
  }
  return true;
}

Scalar pearson_span(std::span<const Scalar> a, std::span<const Scalar> b) {
  // Constancy is decided on the values, not on the accumulated variance: the
  // rounded mean of a constant input can sit one ulp off the value, leaving
  // a spuriously nonzero sum of squared deviations.
  if (is_constant(a) || is_constant(b)) {
    throw DomainError("pearson_r: correlation undefined for a constant input");
  }
  const Scalar ma = mean_of(a);
  const Scalar mb = mean_of(b);
  const Scalar va = ssd_about(a, ma);
  const Scalar vb = ssd_about(b, mb);
  Scalar cov = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) cov += (a[i] - ma) * (b[i] - mb);
  return cov / std::sqrt(va * vb);
}

std::vector<Scalar> diff(std::span<const Scalar> a, std::span<const Scalar> b) {
  std::vector<Scalar> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

std::string format_cell(Scalar v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

std::string format_cell(const std::optional<Scalar>& v) {
  return v ? format_cell(*v) : std::string("NA");
}

}  // namespace

Scalar entropy(const Tensor& img) {
  if (img.empty()) throw DimensionError("entropy: empty input");
  std::array<std::size_t, 256> counts{};
  for (Scalar v : img.values()) counts[quantize8(v)] += 1;
  const Scalar n = static_cast<Scalar>(img.size());
  Scalar bits = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const Scalar p = static_cast<Scalar>(c) / n;
    bits -= p * std::log2(p);
  }
  return bits;
}

Scalar std_dev(const Tensor& img) {
  if (img.empty()) throw DimensionError("std_dev: empty input");
  auto v = img.values();
  return std::sqrt(ssd_about(v, mean_of(v)) / static_cast<Scalar>(v.size()));
}

Scalar psnr(const Tensor& fused, const Tensor& ref) {
  check_same_shape(fused, ref, "psnr");
  auto a = fused.values();
  auto b = ref.values();
  Scalar mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<Scalar>(a.size());
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

Scalar pearson_r(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "pearson_r");
  return pearson_span(a.values(), b.values());
}

Scalar cc(const Tensor& fused, const Tensor& ir, const Tensor& vis) {
  return (pearson_r(fused, ir) + pearson_r(fused, vis)) / 2.0;
}

Scalar scd(const Tensor& fused, const Tensor& ir, const Tensor& vis) {
  check_same_shape(fused, ir, "scd");
  check_same_shape(fused, vis, "scd");
  const std::vector<Scalar> fv = diff(fused.values(), vis.values());
  const std::vector<Scalar> fi = diff(fused.values(), ir.values());
  return pearson_span(fv, ir.values()) + pearson_span(fi, vis.values());
}

SignalMap signal_map(const Tensor& fused) {
  if (fused.rank() != 4 || fused.dim(0) != 1 || fused.dim(1) != 1) {
    throw DimensionError("signal_map: expected a 1x1xhxw image, got " +
                         shape_str(fused.shape()));
  }
  const int h = fused.dim(2);
  const int w = fused.dim(3);
  auto v = fused.values();
  SignalMap map;
  map.waveform.assign(static_cast<std::size_t>(w), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      map.waveform[static_cast<std::size_t>(x)] += v[static_cast<std::size_t>(y) * w + x];
    }
  }
  for (Scalar& c : map.waveform) c /= static_cast<Scalar>(h);
  return map;
}

Scalar waveform_distance(const SignalMap& a, const SignalMap& b) {
  if (a.waveform.size() != b.waveform.size() || a.waveform.empty()) {
    throw DimensionError("waveform_distance: width mismatch");
  }
  Scalar s = 0.0;
  for (std::size_t i = 0; i < a.waveform.size(); ++i) {
    const Scalar d = a.waveform[i] - b.waveform[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<Scalar>(a.waveform.size()));
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << "id,condition,EN,SD,PSNR_ir,PSNR_vis,PSNR_mean,CC,SCD,signal_distance\n";
  for (const MetricsRow& r : rows) {
    out << r.id << ',' << r.condition << ',' << format_cell(r.en) << ','
        << format_cell(r.sd) << ',' << format_cell(r.psnr_ir) << ','
        << format_cell(r.psnr_vis) << ',' << format_cell(r.psnr_mean) << ','
        << format_cell(r.cc) << ',' << format_cell(r.scd) << ','
        << format_cell(r.signal_distance) << '\n';
  }
  return out.str();
}

std::string MetricsReport::aggregate_json() const {
  using Column = std::pair<const char*, std::function<std::optional<Scalar>(const MetricsRow&)>>;
  const std::vector<Column> columns = {
      {"EN", [](const MetricsRow& r) { return std::optional<Scalar>(r.en); }},
      {"SD", [](const MetricsRow& r) { return std::optional<Scalar>(r.sd); }},
      {"PSNR_ir", [](const MetricsRow& r) { return std::optional<Scalar>(r.psnr_ir); }},
      {"PSNR_vis", [](const MetricsRow& r) { return std::optional<Scalar>(r.psnr_vis); }},
      {"PSNR_mean", [](const MetricsRow& r) { return std::optional<Scalar>(r.psnr_mean); }},
      {"CC", [](const MetricsRow& r) { return r.cc; }},
      {"SCD", [](const MetricsRow& r) { return r.scd; }},
      {"signal_distance",
       [](const MetricsRow& r) { return std::optional<Scalar>(r.signal_distance); }},
  };
  nlohmann::json root;
  for (const char* condition : {"clean", "attacked"}) {
    nlohmann::json block;
    for (const auto& [name, get] : columns) {
      std::vector<Scalar> vals;
      std::size_t flagged = 0;
      for (const MetricsRow& r : rows) {
        if (r.condition != condition) continue;
        if (auto v = get(r)) {
          vals.push_back(*v);
        } else {
          ++flagged;
        }
      }
      nlohmann::json cell;
      cell["flagged"] = flagged;
      if (!vals.empty()) {
        const Scalar m = mean_of(vals);
        cell["mean"] = m;
        cell["stddev"] = std::sqrt(ssd_about(vals, m) / static_cast<Scalar>(vals.size()));
      } else {
        cell["mean"] = nullptr;
        cell["stddev"] = nullptr;
      }
      block[name] = cell;
    }
    root[condition] = block;
  }
  return root.dump(2) + "\n";
}

namespace {

MetricsRow meter(const std::string& id, const char* condition, const Tensor& fused,
                 const ImagePair& pair) {
  MetricsRow row;
  row.id = id;
  row.condition = condition;
  row.en = entropy(fused);
  row.sd = std_dev(fused);
  row.psnr_ir = psnr(fused, pair.ir);
  row.psnr_vis = psnr(fused, pair.vis_y);
  row.psnr_mean = (row.psnr_ir + row.psnr_vis) / 2.0;
  try {
    row.cc = cc(fused, pair.ir, pair.vis_y);
  } catch (const DomainError&) {
  }
  try {
    row.scd = scd(fused, pair.ir, pair.vis_y);
  } catch (const DomainError&) {
  }
  return row;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("evaluate: cannot write " + path.string());
  out << content;
}

}  // namespace

MetricsReport evaluate(const std::string& checkpoint_path, const DatasetManifest& manifest,
                       const NetworkConfig& net, const PerturbationBudget& budget,
                       const LabelRecipe& recipe, const LossWeights& weights,
                       const std::string& out_dir) {
  validate_config(net);
  validate_budget(budget);
  validate_recipe(recipe);
  if (manifest.entries.empty()) throw ValidationError("evaluate: empty manifest");

  ModelParams params = load_model_params(checkpoint_path, net);

  fs::create_directories(fs::path(out_dir) / "fused");
  fs::create_directories(fs::path(out_dir) / "waveforms");

  MetricsReport report;
  for (const ManifestEntry& entry : manifest.entries) {
    const ImagePair pair = load_pair(entry);
    const Tensor label = generate_label(pair, recipe);

    NoTapeScope guard;
    const Tensor clean = quantize_unit(forward(params, pair, net));
    AdversarialPair adv = pgd_attack(params, pair, label, budget, weights, net);
    const Tensor adv_ir = add(pair.ir, adv.delta_ir);
    const Tensor adv_vis = add(pair.vis_y, adv.delta_vis);
    const Tensor attacked = quantize_unit(forward_sources(params, adv_ir, adv_vis, net));

    save_pgm((fs::path(out_dir) / "fused" / (entry.id + "_clean.pgm")).string(), clean);
    save_pgm((fs::path(out_dir) / "fused" / (entry.id + "_attacked.pgm")).string(), attacked);

    const SignalMap clean_map = signal_map(clean);
    const SignalMap attacked_map = signal_map(attacked);
    const Scalar distance = waveform_distance(clean_map, attacked_map);

    MetricsRow clean_row = meter(entry.id, "clean", clean, pair);
    MetricsRow attacked_row = meter(entry.id, "attacked", attacked, pair);
    clean_row.signal_distance = distance;
    attacked_row.signal_distance = distance;
    report.rows.push_back(clean_row);
    report.rows.push_back(attacked_row);

    std::ostringstream wave;
    wave.precision(17);
    wave << "column_index,clean_value,attacked_value\n";
    for (std::size_t i = 0; i < clean_map.waveform.size(); ++i) {
      wave << i << ',' << clean_map.waveform[i] << ',' << attacked_map.waveform[i] << '\n';
    }
    write_text(fs::path(out_dir) / "waveforms" / (entry.id + ".csv"), wave.str());
  }

  write_text(fs::path(out_dir) / "report.csv", report.to_csv());
  write_text(fs::path(out_dir) / "aggregate.json", report.aggregate_json());
  return report;
}

}  // namespace a2r
