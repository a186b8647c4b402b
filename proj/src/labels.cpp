#include "a2rnet/labels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

#include "a2rnet/losses.hpp"
#include "a2rnet/ops.hpp"
#include "a2rnet/rng.hpp"
#include "a2rnet/train.hpp"

namespace a2r {

namespace {

namespace fs = std::filesystem;

void check_pair(const ImagePair& pair) {
  if (pair.ir.empty() || pair.vis_y.empty()) {
    throw ValidationError("generate_label: pair has empty sources");
  }
  if (pair.ir.shape() != pair.vis_y.shape() || pair.ir.rank() != 4 ||
      pair.ir.dim(0) != 1 || pair.ir.dim(1) != 1) {
    throw ValidationError("generate_label: sources must be matching 1x1xhxw tensors");
  }
}

Tensor max_label(const Tensor& ir, const Tensor& vis) {
  auto a = ir.values();
  auto b = vis.values();
  std::vector<Scalar> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::max(a[i], b[i]);
  return Tensor::from_values(ir.shape(), std::move(out));
}

Tensor weighted_label(const Tensor& ir, const Tensor& vis, Scalar w) {
  auto a = ir.values();
  auto b = vis.values();
  std::vector<Scalar> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = w * a[i] + (1.0 - w) * b[i];
  return Tensor::from_values(ir.shape(), std::move(out));
}

// Plain 4-layer CNN: 3x3 convs 2->16->16->16->1, LeakyReLU(0.2) between,
// sigmoid head. Initialized like the fusion network (slope-corrected fan-in
// bound for layers feeding LeakyReLU, unit gain for the head).
ModelParams build_label_net(std::uint64_t seed) {
  const Scalar leaky_gain = std::sqrt(2.0 / (1.0 + 0.2 * 0.2));
  struct Layer {
    const char* name;
    int c_out, c_in;
    Scalar gain;
  };
  const Layer layers[] = {{"conv1", 16, 2, leaky_gain},
                          {"conv2", 16, 16, leaky_gain},
                          {"conv3", 16, 16, leaky_gain},
                          {"head", 1, 16, 1.0}};
  Rng rng(seed);
  ModelParams net;
  for (const Layer& l : layers) {
    const int fan_in = l.c_in * 3 * 3;
    const Scalar bound = l.gain * std::sqrt(3.0 / fan_in);
    std::vector<Scalar> w(static_cast<std::size_t>(l.c_out) * l.c_in * 3 * 3);
    for (Scalar& x : w) x = rng.uniform(-bound, bound);
    Tensor wt = Tensor::from_values({l.c_out, l.c_in, 3, 3}, std::move(w));
    wt.set_requires_grad(true);
    net.add(std::string(l.name) + ".weight", wt);
    Tensor bt = Tensor::zeros({l.c_out});
    bt.set_requires_grad(true);
    net.add(std::string(l.name) + ".bias", bt);
  }
  net.init_seed = seed;
  return net;
}

Tensor label_net_forward(const ModelParams& net, const Tensor& x) {
  Tensor h = x;
  for (const char* name : {"conv1", "conv2", "conv3"}) {
    const Tensor& w = net.at(std::string(name) + ".weight");
    const Tensor& b = net.at(std::string(name) + ".bias");
    h = conv2d(h, w, 1, 1);
    h = add(h, broadcast_to(reshape(b, {1, w.dim(0), 1, 1}), h.shape()));
    h = leaky_relu(h, 0.2);
  }
  const Tensor& w = net.at("head.weight");
  const Tensor& b = net.at("head.bias");
  h = conv2d(h, w, 1, 1);
  h = add(h, broadcast_to(reshape(b, {1, w.dim(0), 1, 1}), h.shape()));
  return sigmoid(h);
}

Tensor one_minus(const Tensor& t) { return add(neg(t), 1.0); }

Tensor learned_label(const ImagePair& pair, const LabelRecipe& recipe) {
  ModelParams net = build_label_net(recipe.seed);
  AdamState state = make_adam_state(net);
  const TrainConfig opt{};  // Adam defaults; only the optimizer fields matter
  const LossWeights w{};    // SSIM window/constants
  Tensor x = concat({pair.ir, pair.vis_y}, 1);
  for (int step = 0; step < recipe.epochs; ++step) {
    Tape tape;
    TapeScope scope(tape);
    zero_grad(net);
    Tensor out = label_net_forward(net, x);
    Tensor loss = add(add(l1_loss(out, pair.ir), l1_loss(out, pair.vis_y)),
                      add(one_minus(mean_ssim(out, pair.ir, w)),
                          one_minus(mean_ssim(out, pair.vis_y, w))));
    if (!std::isfinite(loss.value())) {
      std::ostringstream msg;
      msg << "generate_label: non-finite training loss at step " << step << " for pair "
          << pair.id;
      throw DomainError(msg.str());
    }
    backward(loss);
    adam_step(net, state, opt);
  }
  NoTapeScope guard;
  return label_net_forward(net, x);
}

Tensor compute_label(const ImagePair& pair, const LabelRecipe& recipe) {
  switch (recipe.mode) {
    case LabelRecipe::Mode::analytic_max:
      return max_label(pair.ir, pair.vis_y);
    case LabelRecipe::Mode::analytic_weighted:
      return weighted_label(pair.ir, pair.vis_y, recipe.w_ir);
    case LabelRecipe::Mode::learned_cnn:
      return learned_label(pair, recipe);
  }
  throw ValidationError("generate_label: unknown recipe mode");
}

bool cache_id_ok(const std::string& id) {
  if (id.empty() || id.front() == '.') return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
  });
}

std::map<std::string, std::string> read_index(const fs::path& index_path) {
  std::map<std::string, std::string> index;
  std::ifstream in(index_path);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string id, hash, extra;
    if ((row >> id >> hash) && !(row >> extra)) index[id] = hash;
  }
  return index;
}

void write_index(const fs::path& index_path, const std::map<std::string, std::string>& index) {
  std::ofstream out(index_path, std::ios::binary);
  if (!out) throw ValidationError("label cache: cannot write " + index_path.string());
  for (const auto& [id, hash] : index) out << id << ' ' << hash << '\n';
}

}  // namespace

void validate_recipe(const LabelRecipe& recipe) {
  if (!(recipe.w_ir >= 0.0 && recipe.w_ir <= 1.0)) {
    throw ValidationError("label recipe: w_ir must lie in [0, 1]");
  }
  if (recipe.mode == LabelRecipe::Mode::learned_cnn && recipe.epochs < 1) {
    throw ValidationError("label recipe: learned_cnn needs epochs >= 1");
  }
}

std::string recipe_hash(const LabelRecipe& recipe) {
  std::ostringstream key;
  switch (recipe.mode) {
    case LabelRecipe::Mode::analytic_max:
      key << "max";
      break;
    case LabelRecipe::Mode::analytic_weighted:
      key.precision(17);
      key << "weighted:" << recipe.w_ir;
      break;
    case LabelRecipe::Mode::learned_cnn:
      key << "learned:" << recipe.seed << ':' << recipe.epochs;
      break;
  }
  const std::string s = key.str();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << h;
  return hex.str();
}

Tensor generate_label(const ImagePair& pair, const LabelRecipe& recipe) {
  validate_recipe(recipe);
  check_pair(pair);
  if (recipe.cache_dir.empty()) return compute_label(pair, recipe);

  if (!cache_id_ok(pair.id)) {
    throw ValidationError("label cache: pair id '" + pair.id + "' is unusable as a file name");
  }
  const fs::path dir(recipe.cache_dir);
  const fs::path index_path = dir / "labels.index";
  const fs::path pgm_path = dir / (pair.id + ".pgm");
  const std::string hash = recipe_hash(recipe);

  auto index = read_index(index_path);
  auto it = index.find(pair.id);
  if (it != index.end() && it->second == hash) {
    try {
      Tensor cached = load_pgm(pgm_path.string());
      if (cached.shape() == pair.ir.shape()) return cached;
      std::cerr << "label cache: " << pgm_path.string()
                << " has the wrong extent; regenerating\n";
    } catch (const Error& e) {
      std::cerr << "label cache: " << pgm_path.string() << " is unreadable ("
                << e.what() << "); regenerating\n";
    }
  }

  Tensor label = quantize_unit(compute_label(pair, recipe));
  fs::create_directories(dir);
  save_pgm(pgm_path.string(), label);
  index[pair.id] = hash;
  write_index(index_path, index);
  return label;
}

}  // namespace a2r
