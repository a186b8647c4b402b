#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "a2rnet/labels.hpp"
#include "a2rnet/losses.hpp"
#include "support/test_util.hpp"

using namespace a2r;
using a2r::testing::make_random;
using a2r::testing::require_bitwise_equal;
using a2r::testing::ScratchDir;
using a2r::testing::slurp;

namespace fs = std::filesystem;

namespace {

ImagePair grid_pair(std::uint64_t seed, int h, int w, std::string id = "p") {
  Rng rng(seed);
  ImagePair pair;
  pair.ir = quantize_unit(make_random({1, 1, h, w}, rng, 0.0, 1.0));
  pair.vis_y = quantize_unit(make_random({1, 1, h, w}, rng, 0.0, 1.0));
  pair.id = std::move(id);
  return pair;
}

ImagePair ramp_pair(int h, int w, std::string id = "r") {
  std::vector<Scalar> v(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      v[static_cast<std::size_t>(y) * w + x] =
          0.25 + 0.5 * (y + x) / static_cast<Scalar>(h + w - 2);
    }
  }
  ImagePair pair;
  pair.ir = quantize_unit(Tensor::from_values({1, 1, h, w}, std::move(v)));
  pair.vis_y = pair.ir.clone();
  pair.id = std::move(id);
  return pair;
}

}  // namespace

TEST_CASE("label recipe validation") {
  LabelRecipe ok;
  ok.mode = LabelRecipe::Mode::analytic_weighted;
  ok.w_ir = 0.0;
  validate_recipe(ok);
  ok.w_ir = 1.0;
  validate_recipe(ok);

  LabelRecipe bad = ok;
  bad.w_ir = -0.1;
  REQUIRE_THROWS_AS(validate_recipe(bad), ValidationError);
  bad.w_ir = 1.5;
  REQUIRE_THROWS_AS(validate_recipe(bad), ValidationError);
  bad.w_ir = std::nan("");
  REQUIRE_THROWS_AS(validate_recipe(bad), ValidationError);

  LabelRecipe learned;
  learned.mode = LabelRecipe::Mode::learned_cnn;
  learned.epochs = 0;
  REQUIRE_THROWS_AS(validate_recipe(learned), ValidationError);
}

TEST_CASE("recipe hash keys content, not location") {
  LabelRecipe max;
  max.mode = LabelRecipe::Mode::analytic_max;
  LabelRecipe weighted;
  weighted.mode = LabelRecipe::Mode::analytic_weighted;
  weighted.w_ir = 0.3;
  LabelRecipe learned;
  learned.mode = LabelRecipe::Mode::learned_cnn;
  learned.seed = 5;
  learned.epochs = 40;

  for (const LabelRecipe& r : {max, weighted, learned}) {
    const std::string h = recipe_hash(r);
    REQUIRE(h.size() == 16);
    REQUIRE(h.find_first_not_of("0123456789abcdef") == std::string::npos);
  }
  REQUIRE(recipe_hash(max) != recipe_hash(weighted));
  REQUIRE(recipe_hash(max) != recipe_hash(learned));
  REQUIRE(recipe_hash(weighted) != recipe_hash(learned));

  LabelRecipe weighted2 = weighted;
  weighted2.w_ir = 0.4;
  REQUIRE(recipe_hash(weighted) != recipe_hash(weighted2));
  LabelRecipe learned2 = learned;
  learned2.seed = 6;
  REQUIRE(recipe_hash(learned) != recipe_hash(learned2));
  learned2 = learned;
  learned2.epochs = 41;
  REQUIRE(recipe_hash(learned) != recipe_hash(learned2));

  LabelRecipe relocated = max;
  relocated.cache_dir = "/somewhere/else";
  REQUIRE(recipe_hash(relocated) == recipe_hash(max));
  // The analytic maximum ignores the blend weight and the training knobs.
  LabelRecipe max2 = max;
  max2.w_ir = 0.9;
  max2.seed = 123;
  max2.epochs = 7;
  REQUIRE(recipe_hash(max2) == recipe_hash(max));
}

TEST_CASE("analytic maximum label") {
  LabelRecipe recipe;
  recipe.mode = LabelRecipe::Mode::analytic_max;

  SUBCASE("single pixel example") {
    ImagePair pair;
    pair.ir = Tensor::from_values({1, 1, 1, 1}, {0.2});
    pair.vis_y = Tensor::from_values({1, 1, 1, 1}, {0.7});
    pair.id = "px";
    Tensor label = generate_label(pair, recipe);
    REQUIRE(label.value() == 0.7);
  }

  SUBCASE("matches a direct elementwise maximum") {
    ImagePair pair = grid_pair(31, 6, 7);
    Tensor label = generate_label(pair, recipe);
    REQUIRE(label.shape() == pair.ir.shape());
    auto a = pair.ir.values();
    auto b = pair.vis_y.values();
    auto l = label.values();
    for (std::size_t i = 0; i < l.size(); ++i) {
      REQUIRE(l[i] == (a[i] > b[i] ? a[i] : b[i]));
    }
  }

  SUBCASE("dominates both sources") {
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
      ImagePair pair = grid_pair(seed, 8, 8);
      Tensor label = generate_label(pair, recipe);
      auto a = pair.ir.values();
      auto b = pair.vis_y.values();
      auto l = label.values();
      for (std::size_t i = 0; i < l.size(); ++i) {
        REQUIRE(l[i] >= a[i]);
        REQUIRE(l[i] >= b[i]);
      }
    }
  }

  SUBCASE("identical sources pass through") {
    ImagePair pair = ramp_pair(8, 8);
    Tensor label = generate_label(pair, recipe);
    require_bitwise_equal(label.values(), pair.ir.values());
  }
}

TEST_CASE("analytic weighted label") {
  ImagePair pair = grid_pair(77, 5, 9);
  LabelRecipe recipe;
  recipe.mode = LabelRecipe::Mode::analytic_weighted;

  SUBCASE("unit weight returns the infrared source exactly") {
    recipe.w_ir = 1.0;
    require_bitwise_equal(generate_label(pair, recipe).values(), pair.ir.values());
  }

  SUBCASE("zero weight returns the visible source exactly") {
    recipe.w_ir = 0.0;
    require_bitwise_equal(generate_label(pair, recipe).values(), pair.vis_y.values());
  }

  SUBCASE("interior weight matches the blend formula") {
    recipe.w_ir = 0.3;
    Tensor label = generate_label(pair, recipe);
    auto a = pair.ir.values();
    auto b = pair.vis_y.values();
    auto l = label.values();
    for (std::size_t i = 0; i < l.size(); ++i) {
      REQUIRE(l[i] == doctest::Approx(0.3 * a[i] + 0.7 * b[i]).epsilon(1e-14));
      REQUIRE(l[i] >= 0.0);
      REQUIRE(l[i] <= 1.0);
    }
  }

  SUBCASE("identical sources pass through") {
    ImagePair same = ramp_pair(8, 8);
    recipe.w_ir = 0.37;
    Tensor label = generate_label(same, recipe);
    auto l = label.values();
    auto a = same.ir.values();
    for (std::size_t i = 0; i < l.size(); ++i) {
      REQUIRE(l[i] == doctest::Approx(a[i]).epsilon(1e-14));
    }
  }
}

TEST_CASE("pair shape errors") {
  LabelRecipe recipe;
  recipe.mode = LabelRecipe::Mode::analytic_max;
  ImagePair pair;
  pair.ir = Tensor::zeros({1, 1, 4, 4});
  pair.vis_y = Tensor::zeros({1, 1, 4, 5});
  REQUIRE_THROWS_AS(generate_label(pair, recipe), ValidationError);
  pair.vis_y = Tensor::zeros({1, 2, 4, 4});
  REQUIRE_THROWS_AS(generate_label(pair, recipe), ValidationError);
  pair.ir = Tensor();
  REQUIRE_THROWS_AS(generate_label(pair, recipe), ValidationError);
}

TEST_CASE("learned label fits a shared source") {
  ImagePair pair = ramp_pair(16, 16);
  LabelRecipe recipe;
  recipe.mode = LabelRecipe::Mode::learned_cnn;
  recipe.seed = 11;
  recipe.epochs = 200;

  Tensor label = generate_label(pair, recipe);
  REQUIRE(label.shape() == pair.ir.shape());
  for (Scalar v : label.values()) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
  REQUIRE(l1_loss(label, pair.ir).value() <= 0.05);

  Tensor again = generate_label(pair, recipe);
  require_bitwise_equal(again.values(), label.values());
}

TEST_CASE("label cache") {
  LabelRecipe recipe;
  recipe.mode = LabelRecipe::Mode::analytic_max;

  SUBCASE("hit is bit-identical to fresh generation") {
    ScratchDir tmp;
    recipe.cache_dir = tmp.path("labels");
    ImagePair pair = grid_pair(9, 8, 8, "pair-a");
    Tensor first = generate_label(pair, recipe);
    REQUIRE(fs::exists(fs::path(recipe.cache_dir) / "pair-a.pgm"));
    const std::string index = slurp((fs::path(recipe.cache_dir) / "labels.index").string());
    REQUIRE(index.find("pair-a " + recipe_hash(recipe)) != std::string::npos);

    Tensor second = generate_label(pair, recipe);
    require_bitwise_equal(second.values(), first.values());

    // Grid-aligned sources: the cached 8-bit label equals the exact one.
    LabelRecipe uncached = recipe;
    uncached.cache_dir.clear();
    require_bitwise_equal(generate_label(pair, uncached).values(), first.values());
  }

  SUBCASE("corrupt image is regenerated") {
    ScratchDir tmp;
    recipe.cache_dir = tmp.path("labels");
    ImagePair pair = grid_pair(10, 8, 8, "pair-b");
    Tensor first = generate_label(pair, recipe);
    const std::string pgm = (fs::path(recipe.cache_dir) / "pair-b.pgm").string();

    std::ofstream(pgm, std::ios::binary) << "not a pgm";
    Tensor repaired = generate_label(pair, recipe);
    require_bitwise_equal(repaired.values(), first.values());
    require_bitwise_equal(load_pgm(pgm).values(), first.values());

    fs::remove(pgm);
    require_bitwise_equal(generate_label(pair, recipe).values(), first.values());
    REQUIRE(fs::exists(pgm));
  }

  SUBCASE("stale recipe hash is a miss, not a hit") {
    ScratchDir tmp;
    recipe.cache_dir = tmp.path("labels");
    ImagePair pair = grid_pair(11, 8, 8, "pair-c");
    generate_label(pair, recipe);

    // Rewrite the cached image with the visible source and mark it as
    // belonging to a different recipe; the lookup must not trust it.
    const fs::path dir(recipe.cache_dir);
    save_pgm((dir / "pair-c.pgm").string(), pair.vis_y);
    std::ofstream(dir / "labels.index") << "pair-c 0123456789abcdef\n";
    Tensor regenerated = generate_label(pair, recipe);
    LabelRecipe uncached = recipe;
    uncached.cache_dir.clear();
    require_bitwise_equal(regenerated.values(), generate_label(pair, uncached).values());
  }

  SUBCASE("off-grid sources quantize once and stay fixed") {
    ScratchDir tmp;
    recipe.cache_dir = tmp.path("labels");
    ImagePair pair;
    pair.ir = Tensor::from_values({1, 1, 1, 2}, {0.2, 0.71});
    pair.vis_y = Tensor::from_values({1, 1, 1, 2}, {0.7, 0.1});
    pair.id = "pair-d";
    Tensor cached = generate_label(pair, recipe);
    LabelRecipe uncached = recipe;
    uncached.cache_dir.clear();
    Tensor exact = generate_label(pair, uncached);
    for (std::size_t i = 0; i < 2; ++i) {
      REQUIRE(std::fabs(cached.values()[i] - exact.values()[i]) <= 0.5 / 255.0);
    }
    require_bitwise_equal(generate_label(pair, recipe).values(), cached.values());
  }

  SUBCASE("unusable pair id is rejected") {
    ScratchDir tmp;
    recipe.cache_dir = tmp.path("labels");
    ImagePair pair = grid_pair(12, 4, 4, "../escape");
    REQUIRE_THROWS_AS(generate_label(pair, recipe), ValidationError);
    pair.id = "";
    REQUIRE_THROWS_AS(generate_label(pair, recipe), ValidationError);
  }

  SUBCASE("learned label trains once and replays from cache") {
    ScratchDir tmp;
    LabelRecipe learned;
    learned.mode = LabelRecipe::Mode::learned_cnn;
    learned.seed = 3;
    learned.epochs = 25;
    learned.cache_dir = tmp.path("labels");
    ImagePair pair = grid_pair(13, 12, 12, "pair-e");
    Tensor first = generate_label(pair, learned);
    Tensor second = generate_label(pair, learned);
    require_bitwise_equal(second.values(), first.values());
  }
}
