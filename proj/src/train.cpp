#include "a2rnet/train.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <utility>

#include "a2rnet/ops.hpp"
#include "a2rnet/rng.hpp"

namespace a2r {

namespace {

constexpr const char* kOptimPrefix = "optim.";

std::uint64_t fnv1a_bytes(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

// Value hash used to assert that attack generation leaves parameters intact.
std::uint64_t params_hash(const ModelParams& params) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& [name, t] : params.entries()) {
    h = fnv1a_bytes(name.data(), name.size(), h);
    for (Scalar v : t.values()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      h = fnv1a_bytes(&bits, sizeof(bits), h);
    }
  }
  return h;
}

// Distinct shuffle stream per (run seed, epoch); the epoch index enters
// absolutely so a resumed run replays the same order.
std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(epoch) + 1);
}

Tensor scalar_entry(Scalar v) { return Tensor::from_values({1}, {v}); }

}  // namespace

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw ValidationError("train config: epochs must be >= 0");
  if (cfg.batch < 1) throw ValidationError("train config: batch must be >= 1");
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ValidationError("train config: learning_rate must be positive and finite");
  }
  if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0) ||
      !(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0)) {
    throw ValidationError("train config: adam betas must lie in [0, 1)");
  }
  if (!(cfg.adam_eps > 0.0)) throw ValidationError("train config: adam_eps must be positive");
  if (cfg.adversarial) validate_budget(cfg.budget);
}

AdamState make_adam_state(const ModelParams& params) {
  AdamState state;
  state.slots.reserve(params.size());
  for (const auto& [name, t] : params.entries()) {
    state.slots.push_back({name, std::vector<Scalar>(t.size(), 0.0),
                           std::vector<Scalar>(t.size(), 0.0)});
  }
  return state;
}

void zero_grad(ModelParams& params) {
  for (auto& [name, t] : params.entries()) t.zero_grad();
}

void adam_step(ModelParams& params, AdamState& state, const TrainConfig& cfg) {
  if (state.slots.size() != params.size()) {
    throw ContractError("adam_step: optimizer state does not match the parameter list");
  }
  state.t += 1;
  const Scalar b1 = cfg.adam_beta1;
  const Scalar b2 = cfg.adam_beta2;
  const Scalar corr1 = 1.0 - std::pow(b1, static_cast<Scalar>(state.t));
  const Scalar corr2 = 1.0 - std::pow(b2, static_cast<Scalar>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params.entries()[i];
    AdamState::Slot& slot = state.slots[i];
    if (slot.name != name || slot.m.size() != t.size()) {
      throw ContractError("adam_step: optimizer slot mismatch for " + name);
    }
    if (!t.has_grad()) throw ContractError("adam_step: missing gradient for " + name);
    auto g = t.grad();
    auto x = t.mutable_values();
    for (std::size_t j = 0; j < slot.m.size(); ++j) {
      slot.m[j] = b1 * slot.m[j] + (1.0 - b1) * g[j];
      slot.v[j] = b2 * slot.v[j] + (1.0 - b2) * g[j] * g[j];
      const Scalar m_hat = slot.m[j] / corr1;
      const Scalar v_hat = slot.v[j] / corr2;
      x[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

EpochSummary train_epoch(ModelParams& params, AdamState& state,
                         const std::vector<ImagePair>& pairs,
                         const std::vector<Tensor>& labels, const NetworkConfig& net,
                         const TrainConfig& cfg, int epoch) {
  if (pairs.empty()) throw ValidationError("train_epoch: empty dataset");
  if (labels.size() != pairs.size()) {
    throw ValidationError("train_epoch: one label per pair required");
  }
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng perm(epoch_seed(cfg.seed, epoch));
  perm.shuffle(order);

  Scalar sum_clean = 0.0;
  Scalar sum_adv = 0.0;
  const std::size_t n = order.size();
  const auto batch = static_cast<std::size_t>(cfg.batch);
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t m = std::min(batch, n - start);
    zero_grad(params);
    for (std::size_t k = 0; k < m; ++k) {
      const ImagePair& pair = pairs[order[start + k]];
      const Tensor& label = labels[order[start + k]];
      Tensor adv_ir = pair.ir;
      Tensor adv_vis = pair.vis_y;
      if (cfg.adversarial) {
        const std::uint64_t before = params_hash(params);
        AdversarialPair adv = pgd_attack(params, pair, label, cfg.budget, cfg.weights, net);
        if (params_hash(params) != before) {
          throw ContractError("train_epoch: attack generation mutated parameters");
        }
        adv_ir = add(pair.ir, adv.delta_ir);
        adv_vis = add(pair.vis_y, adv.delta_vis);
      }
      Tape tape;
      TapeScope scope(tape);
      Tensor y_clean = forward_sources(params, pair.ir, pair.vis_y, net);
      Tensor y_adv = forward_sources(params, adv_ir, adv_vis, net);
      Tensor loss_clean = base_loss(y_clean, label, cfg.weights);
      Tensor loss_adv = base_loss(y_adv, label, cfg.weights);
      // Batch-mean objective; the division lives inside the graph so the
      // accumulated gradients are already averaged.
      Tensor loss = scale(add(loss_clean, loss_adv), 1.0 / static_cast<Scalar>(m));
      if (!std::isfinite(loss.value())) {
        std::ostringstream msg;
        msg << "train_epoch: non-finite loss in epoch " << epoch << ", batch "
            << (start / batch) << ", pair " << pair.id;
        throw DomainError(msg.str());
      }
      backward(loss);
      sum_clean += loss_clean.value();
      sum_adv += loss_adv.value();
    }
    adam_step(params, state, cfg);
  }
  return {sum_clean / static_cast<Scalar>(n), sum_adv / static_cast<Scalar>(n)};
}

void save_train_state(const std::string& path, const ModelParams& params,
                      const AdamState& state, int next_epoch) {
  if (state.slots.size() != params.size()) {
    throw ContractError("save_train_state: optimizer state does not match the parameter list");
  }
  ModelParams out;
  for (const auto& [name, t] : params.entries()) out.add(name, t);
  out.add(std::string(kOptimPrefix) + "t", scalar_entry(static_cast<Scalar>(state.t)));
  out.add(std::string(kOptimPrefix) + "epoch", scalar_entry(static_cast<Scalar>(next_epoch)));
  for (const AdamState::Slot& slot : state.slots) {
    Shape shape{static_cast<int>(slot.m.size())};
    out.add(std::string(kOptimPrefix) + "m." + slot.name, Tensor::from_values(shape, slot.m));
    out.add(std::string(kOptimPrefix) + "v." + slot.name, Tensor::from_values(shape, slot.v));
  }
  save_checkpoint(path, out);
}

void load_train_state(const std::string& path, const NetworkConfig& net,
                      ModelParams& params, AdamState& state, int& next_epoch) {
  ModelParams all = load_checkpoint(path);
  ModelParams model;
  ModelParams optim;
  for (const auto& [name, t] : all.entries()) {
    if (name.starts_with(kOptimPrefix)) {
      optim.add(name.substr(std::string(kOptimPrefix).size()), t);
    } else {
      model.add(name, t);
    }
  }
  validate_params(model, net);
  params = std::move(model);
  if (!optim.has("t")) {
    state = make_adam_state(params);
    next_epoch = 0;
    return;
  }
  state = AdamState{};
  state.t = static_cast<long long>(optim.at("t").value());
  next_epoch = static_cast<int>(optim.at("epoch").value());
  state.slots.reserve(params.size());
  for (const auto& [name, t] : params.entries()) {
    const std::string mk = "m." + name;
    const std::string vk = "v." + name;
    if (!optim.has(mk) || !optim.has(vk)) {
      throw FormatError(path + ": missing optimizer moments for " + name);
    }
    const Tensor& m = optim.at(mk);
    const Tensor& v = optim.at(vk);
    if (m.size() != t.size() || v.size() != t.size()) {
      throw FormatError(path + ": optimizer moment size mismatch for " + name);
    }
    state.slots.push_back({name, {m.values().begin(), m.values().end()},
                           {v.values().begin(), v.values().end()}});
  }
}

ModelParams load_model_params(const std::string& path, const NetworkConfig& net) {
  ModelParams all = load_checkpoint(path);
  ModelParams model;
  for (const auto& [name, t] : all.entries()) {
    if (!name.starts_with(kOptimPrefix)) model.add(name, t);
  }
  validate_params(model, net);
  return model;
}

TrainResult train(const NetworkConfig& net, const TrainConfig& cfg,
                  const DatasetManifest& manifest, const LabelRecipe& recipe,
                  const std::string& out_dir, const std::string& resume_from) {
  validate_config(net);
  validate_train_config(cfg);
  validate_recipe(recipe);
  if (manifest.entries.empty()) throw ValidationError("train: empty manifest");
  std::filesystem::create_directories(out_dir);

  std::vector<ImagePair> pairs;
  pairs.reserve(manifest.size());
  for (const ManifestEntry& entry : manifest.entries) pairs.push_back(load_pair(entry));
  std::vector<Tensor> labels;
  labels.reserve(pairs.size());
  for (const ImagePair& pair : pairs) labels.push_back(generate_label(pair, recipe));

  ModelParams params;
  AdamState state;
  int next_epoch = 0;
  if (resume_from.empty()) {
    params = build_model(net, cfg.seed);
    state = make_adam_state(params);
  } else {
    load_train_state(resume_from, net, params, state, next_epoch);
  }

  TrainResult result;
  result.checkpoint_path = (std::filesystem::path(out_dir) / "checkpoint.bin").string();
  result.log_path = (std::filesystem::path(out_dir) / "train_log.csv").string();
  std::ofstream log(result.log_path, std::ios::binary);
  if (!log) throw ValidationError("train: cannot open log file " + result.log_path);
  log << "epoch,mean_clean_loss,mean_adv_loss,wall_seconds\n";
  log.precision(17);
  for (int epoch = next_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochSummary summary = train_epoch(params, state, pairs, labels, net, cfg, epoch);
    const std::chrono::duration<double> wall = std::chrono::steady_clock::now() - t0;
    log << epoch << ',' << summary.mean_clean_loss << ',' << summary.mean_adv_loss << ','
        << wall.count() << '\n';
    log.flush();
    result.epochs.push_back(summary);
  }
  save_train_state(result.checkpoint_path, params, state, cfg.epochs);
  return result;
}

}  // namespace a2r
