#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "a2rnet/metrics.hpp"
#include "a2rnet/train.hpp"
#include "support/synthetic.hpp"
#include "support/test_util.hpp"

using namespace a2r;
using a2r::testing::make_random;
using a2r::testing::ScratchDir;
using a2r::testing::slurp;
using a2r::testing::write_synthetic_dataset;

namespace fs = std::filesystem;

namespace {

Tensor image(std::uint64_t seed, int h, int w) {
  Rng rng(seed);
  return make_random({1, 1, h, w}, rng, 0.0, 1.0);
}

// Straight-line reimplementation used as the oracle for the library pearson.
Scalar raw_pearson(std::span<const Scalar> a, std::span<const Scalar> b) {
  Scalar ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  Scalar cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("entropy") {
  SUBCASE("constant image carries no information") {
    REQUIRE(entropy(Tensor::full({1, 1, 4, 4}, 0.25)) == 0.0);
  }

  SUBCASE("two equal bins carry one bit") {
    std::vector<Scalar> v(16, 0.0);
    for (std::size_t i = 8; i < 16; ++i) v[i] = 1.0;
    REQUIRE(entropy(Tensor::from_values({1, 1, 4, 4}, std::move(v))) ==
            doctest::Approx(1.0).epsilon(1e-15));
  }

  SUBCASE("matches an independent histogram recomputation") {
    for (std::uint64_t seed : {3, 4, 5}) {
      Tensor img = image(seed, 12, 17);
      std::map<int, int> hist;
      for (Scalar v : img.values()) hist[static_cast<int>(quantize8(v))] += 1;
      Scalar want = 0.0;
      for (const auto& [bin, count] : hist) {
        const Scalar p = static_cast<Scalar>(count) / static_cast<Scalar>(img.size());
        want -= p * std::log2(p);
      }
      REQUIRE(entropy(img) == doctest::Approx(want).epsilon(1e-12));
      REQUIRE(entropy(img) >= 0.0);
      REQUIRE(entropy(img) <= 8.0);
    }
  }
}

TEST_CASE("standard deviation") {
  REQUIRE(std_dev(Tensor::full({1, 1, 3, 3}, 0.42)) == 0.0);

  std::vector<Scalar> half(16, 0.0);
  for (std::size_t i = 0; i < 8; ++i) half[i] = 1.0;
  REQUIRE(std_dev(Tensor::from_values({1, 1, 4, 4}, std::move(half))) ==
          doctest::Approx(0.5).epsilon(1e-15));

  Tensor img = image(9, 7, 11);
  Scalar mean = 0.0;
  for (Scalar v : img.values()) mean += v;
  mean /= img.size();
  Scalar var = 0.0;
  for (Scalar v : img.values()) var += (v - mean) * (v - mean);
  var /= img.size();
  REQUIRE(std_dev(img) == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
}

TEST_CASE("psnr") {
  Tensor x = image(21, 8, 8);

  SUBCASE("identical images hit the cap") { REQUIRE(psnr(x, x) == 100.0); }

  SUBCASE("unit error is zero dB") {
    REQUIRE(psnr(Tensor::zeros({1, 1, 4, 4}), Tensor::full({1, 1, 4, 4}, 1.0)) ==
            doctest::Approx(0.0).epsilon(1e-15));
  }

  SUBCASE("monotone decreasing in the error magnitude") {
    std::vector<Scalar> amplitudes = {1e-4, 1e-3, 1e-2, 1e-1};
    Scalar previous = 101.0;
    for (Scalar a : amplitudes) {
      std::vector<Scalar> v(x.values().begin(), x.values().end());
      for (Scalar& y : v) y += a;
      const Scalar p = psnr(Tensor::from_values(x.shape(), std::move(v)), x);
      REQUIRE(p == doctest::Approx(-20.0 * std::log10(a)).epsilon(1e-12));
      REQUIRE(p < previous);
      previous = p;
    }
  }

  SUBCASE("cap boundary") {
    // mse 4e-10 sits above the cap threshold, so the formula applies.
    std::vector<Scalar> v(x.values().begin(), x.values().end());
    for (Scalar& y : v) y += 2e-5;
    const Scalar p = psnr(Tensor::from_values(x.shape(), std::move(v)), x);
    REQUIRE(p == doctest::Approx(10.0 * std::log10(1.0 / 4e-10)).epsilon(1e-9));
    REQUIRE(p < 100.0);
  }

  SUBCASE("shape mismatch") {
    REQUIRE_THROWS_AS(psnr(x, Tensor::zeros({1, 1, 8, 9})), DimensionError);
  }
}

TEST_CASE("pearson correlation") {
  Tensor x = image(33, 9, 9);

  SUBCASE("perfect correlation and anti-correlation") {
    REQUIRE(pearson_r(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<Scalar> neg(x.size());
    for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -x.values()[i] + 0.5;
    REQUIRE(pearson_r(x, Tensor::from_values(x.shape(), std::move(neg))) ==
            doctest::Approx(-1.0).epsilon(1e-12));
  }

  SUBCASE("matches the raw formula and stays in range") {
    Tensor y = image(34, 9, 9);
    const Scalar r = pearson_r(x, y);
    REQUIRE(r == doctest::Approx(raw_pearson(x.values(), y.values())).epsilon(1e-12));
    REQUIRE(std::fabs(r) <= 1.0 + 1e-12);
    REQUIRE(pearson_r(y, x) == doctest::Approx(r).epsilon(1e-15));
  }

  SUBCASE("affine invariance") {
    Tensor y = image(35, 9, 9);
    std::vector<Scalar> scaled(y.size());
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = 2.0 * y.values()[i] + 0.1;
    REQUIRE(pearson_r(x, Tensor::from_values(y.shape(), std::move(scaled))) ==
            doctest::Approx(pearson_r(x, y)).epsilon(1e-12));
  }

  SUBCASE("constant input is undefined") {
    REQUIRE_THROWS_AS(pearson_r(x, Tensor::full({1, 1, 9, 9}, 0.3)), DomainError);
    REQUIRE_THROWS_AS(pearson_r(Tensor::full({1, 1, 9, 9}, 0.3), x), DomainError);
  }
}

TEST_CASE("cc and scd") {
  Tensor ir = image(41, 10, 10);
  Tensor vis = image(42, 10, 10);

  SUBCASE("degenerate identity") {
    REQUIRE(cc(ir, ir, ir) == doctest::Approx(1.0).epsilon(1e-12));
    REQUIRE_THROWS_AS(scd(ir, ir, ir), DomainError);
  }

  SUBCASE("cc is symmetric in the sources") {
    REQUIRE(cc(ir, ir, vis) == cc(ir, vis, ir));
  }

  SUBCASE("scd matches a brute-force recomputation") {
    std::vector<Scalar> avg(ir.size());
    for (std::size_t i = 0; i < avg.size(); ++i) {
      avg[i] = 0.5 * (ir.values()[i] + vis.values()[i]);
    }
    Tensor fused = Tensor::from_values(ir.shape(), std::move(avg));
    std::vector<Scalar> fv(ir.size()), fi(ir.size());
    for (std::size_t i = 0; i < fv.size(); ++i) {
      fv[i] = fused.values()[i] - vis.values()[i];
      fi[i] = fused.values()[i] - ir.values()[i];
    }
    const Scalar want = raw_pearson(fv, ir.values()) + raw_pearson(fi, vis.values());
    REQUIRE(scd(fused, ir, vis) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("signal maps") {
  SUBCASE("column means recomputed directly") {
    Tensor img = image(55, 6, 13);
    SignalMap map = signal_map(img);
    REQUIRE(map.waveform.size() == 13);
    for (int x = 0; x < 13; ++x) {
      Scalar want = 0.0;
      for (int y = 0; y < 6; ++y) want += img.values()[static_cast<std::size_t>(y) * 13 + x];
      want /= 6.0;
      REQUIRE(map.waveform[static_cast<std::size_t>(x)] ==
              doctest::Approx(want).epsilon(1e-12));
      REQUIRE(map.waveform[static_cast<std::size_t>(x)] >= 0.0);
      REQUIRE(map.waveform[static_cast<std::size_t>(x)] <= 1.0);
    }
  }

  SUBCASE("distance properties") {
    SignalMap s = signal_map(image(56, 5, 8));
    REQUIRE(waveform_distance(s, s) == 0.0);
    SignalMap c1 = signal_map(Tensor::full({1, 1, 4, 6}, 0.2));
    SignalMap c2 = signal_map(Tensor::full({1, 1, 4, 6}, 0.7));
    REQUIRE(waveform_distance(c1, c2) == doctest::Approx(0.5).epsilon(1e-12));
    SignalMap wide = signal_map(image(57, 5, 9));
    REQUIRE_THROWS_AS(waveform_distance(s, wide), DimensionError);
  }

  SUBCASE("shape guard") {
    REQUIRE_THROWS_AS(signal_map(Tensor::zeros({1, 2, 4, 4})), DimensionError);
  }
}

TEST_CASE("report serialization flags undefined correlations") {
  MetricsReport report;
  MetricsRow row;
  row.id = "a";
  row.condition = "clean";
  row.en = 1.5;
  row.sd = 0.25;
  row.psnr_ir = 30.0;
  row.psnr_vis = 20.0;
  row.psnr_mean = 25.0;
  row.cc = 0.75;
  // scd left unset: flagged
  row.signal_distance = 0.125;
  report.rows.push_back(row);
  row.condition = "attacked";
  row.cc.reset();
  row.scd = 1.25;
  report.rows.push_back(row);

  const std::string csv = report.to_csv();
  std::istringstream lines(csv);
  std::string header, clean_line, attacked_line;
  std::getline(lines, header);
  std::getline(lines, clean_line);
  std::getline(lines, attacked_line);
  REQUIRE(header == "id,condition,EN,SD,PSNR_ir,PSNR_vis,PSNR_mean,CC,SCD,signal_distance");
  REQUIRE(clean_line == "a,clean,1.5,0.25,30,20,25,0.75,NA,0.125");
  REQUIRE(attacked_line == "a,attacked,1.5,0.25,30,20,25,NA,1.25,0.125");

  const std::string json = report.aggregate_json();
  REQUIRE(json.find("\"flagged\": 1") != std::string::npos);
  REQUIRE(json.find("\"clean\"") != std::string::npos);
  REQUIRE(json.find("\"attacked\"") != std::string::npos);
}

TEST_CASE("evaluate") {
  const NetworkConfig net = [] {
    NetworkConfig n;
    n.base_channels = 4;
    return n;
  }();
  ScratchDir tmp;
  DatasetManifest manifest = write_synthetic_dataset(tmp.path("data"), 7, 2, 16, 16);
  ModelParams params = build_model(net, 5);
  const std::string ckpt = tmp.path("model.bin");
  save_checkpoint(ckpt, params);
  LabelRecipe recipe;
  recipe.mode = LabelRecipe::Mode::analytic_max;
  LossWeights weights;
  PerturbationBudget budget;
  budget.iterations = 2;

  SUBCASE("rows, files, and recomputation from saved images") {
    MetricsReport report =
        evaluate(ckpt, manifest, net, budget, recipe, weights, tmp.path("eval"));
    REQUIRE(report.rows.size() == 2 * manifest.size());
    for (std::size_t p = 0; p < manifest.size(); ++p) {
      const MetricsRow& clean = report.rows[2 * p];
      const MetricsRow& attacked = report.rows[2 * p + 1];
      REQUIRE(clean.id == manifest.entries[p].id);
      REQUIRE(attacked.id == clean.id);
      REQUIRE(clean.condition == "clean");
      REQUIRE(attacked.condition == "attacked");
      REQUIRE(clean.signal_distance == attacked.signal_distance);

      // Every cell must be reproducible from the images evaluate() saved.
      const ImagePair pair = load_pair(manifest.entries[p]);
      for (const MetricsRow* row : {&clean, &attacked}) {
        Tensor saved = load_pgm(tmp.path("eval") + "/fused/" + row->id + "_" +
                                row->condition + ".pgm");
        REQUIRE(row->en == entropy(saved));
        REQUIRE(row->sd == std_dev(saved));
        REQUIRE(row->psnr_ir == psnr(saved, pair.ir));
        REQUIRE(row->psnr_vis == psnr(saved, pair.vis_y));
        REQUIRE(row->psnr_mean == (row->psnr_ir + row->psnr_vis) / 2.0);
        REQUIRE(row->cc.has_value());
        REQUIRE(*row->cc == cc(saved, pair.ir, pair.vis_y));
        REQUIRE(row->scd.has_value());
        REQUIRE(*row->scd == scd(saved, pair.ir, pair.vis_y));
      }
    }
    REQUIRE(fs::exists(tmp.path("eval") + "/report.csv"));
    REQUIRE(fs::exists(tmp.path("eval") + "/aggregate.json"));
    for (const ManifestEntry& e : manifest.entries) {
      REQUIRE(fs::exists(tmp.path("eval") + "/waveforms/" + e.id + ".csv"));
    }

    // Rerunning the evaluation reproduces the artifacts byte for byte.
    evaluate(ckpt, manifest, net, budget, recipe, weights, tmp.path("eval2"));
    REQUIRE(slurp(tmp.path("eval/report.csv")) == slurp(tmp.path("eval2/report.csv")));
    REQUIRE(slurp(tmp.path("eval/aggregate.json")) ==
            slurp(tmp.path("eval2/aggregate.json")));
  }

  SUBCASE("zero budget collapses the two conditions") {
    PerturbationBudget off;
    off.epsilon = 0.0;
    off.alpha = 0.0;
    off.iterations = 1;
    MetricsReport report =
        evaluate(ckpt, manifest, net, off, recipe, weights, tmp.path("eval0"));
    for (std::size_t p = 0; p < manifest.size(); ++p) {
      const MetricsRow& clean = report.rows[2 * p];
      const MetricsRow& attacked = report.rows[2 * p + 1];
      REQUIRE(clean.signal_distance == 0.0);
      REQUIRE(clean.en == attacked.en);
      REQUIRE(clean.sd == attacked.sd);
      REQUIRE(clean.psnr_ir == attacked.psnr_ir);
      REQUIRE(*clean.cc == *attacked.cc);
      REQUIRE(*clean.scd == *attacked.scd);
      REQUIRE(slurp(tmp.path("eval0/fused/" + clean.id + "_clean.pgm")) ==
              slurp(tmp.path("eval0/fused/" + clean.id + "_attacked.pgm")));
    }
  }
}
