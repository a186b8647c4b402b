#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "a2rnet/attack.hpp"
#include "a2rnet/image_io.hpp"
#include "a2rnet/labels.hpp"
#include "a2rnet/losses.hpp"
#include "a2rnet/model.hpp"

namespace a2r {

struct TrainConfig {
  int epochs = 10;
  int batch = 4;
  Scalar learning_rate = 0.001;
  Scalar adam_beta1 = 0.9;
  Scalar adam_beta2 = 0.999;
  Scalar adam_eps = 1e-8;
  // Attack budget used to generate training adversaries; short schedule by
  // default. Ignored when adversarial is false.
  PerturbationBudget budget{.iterations = 3};
  LossWeights weights;
  std::uint64_t seed = 0;
  // false runs the structurally identical supervised loop: the adversarial
  // branch receives the unperturbed pair and no attack is performed. With a
  // zero-epsilon budget the adversarial loop produces bit-identical
  // checkpoints to this mode.
  bool adversarial = true;
};

// epochs >= 0 (zero trains nothing and checkpoints the initialization),
// batch >= 1, positive learning rate, betas in [0,1), positive eps; the
// budget is validated when adversarial is set.
void validate_train_config(const TrainConfig& cfg);

// Adam moment estimates, one slot per parameter in registration order.
struct AdamState {
  struct Slot {
    std::string name;
    std::vector<Scalar> m, v;
  };
  long long t = 0;
  std::vector<Slot> slots;
};

AdamState make_adam_state(const ModelParams& params);

// Zeroes (allocating if needed) the gradient buffer of every parameter.
void zero_grad(ModelParams& params);

// One bias-corrected Adam update from the gradients currently accumulated in
// the parameters. In place; a parameter without a gradient buffer is a
// contract error naming it.
void adam_step(ModelParams& params, AdamState& state, const TrainConfig& cfg);

struct EpochSummary {
  Scalar mean_clean_loss = 0.0;
  Scalar mean_adv_loss = 0.0;
};

// One pass over the dataset in an epoch-seeded shuffled order. Per sample:
// generate the adversarial pair, forward both the clean and the perturbed
// inputs, and take the summed supervised loss on both outputs; one Adam step
// per minibatch on the batch-mean gradient. labels[i] supervises pairs[i].
// A non-finite loss halts with a batch diagnostic.
EpochSummary train_epoch(ModelParams& params, AdamState& state,
                         const std::vector<ImagePair>& pairs,
                         const std::vector<Tensor>& labels, const NetworkConfig& net,
                         const TrainConfig& cfg, int epoch);

struct TrainResult {
  std::string checkpoint_path;
  std::string log_path;
  std::vector<EpochSummary> epochs;
};

// Full run: loads the dataset, generates labels, trains for cfg.epochs
// epochs, and writes <out_dir>/checkpoint.bin plus a CSV log with one
// epoch,mean_clean_loss,mean_adv_loss,wall_seconds row per epoch. A
// non-empty resume_from continues from a saved training state at the epoch
// it recorded; with shared seeds this reproduces the uninterrupted run's
// checkpoint bit-identically (the log's wall_seconds column is wall clock
// and exempt from that guarantee).
TrainResult train(const NetworkConfig& net, const TrainConfig& cfg,
                  const DatasetManifest& manifest, const LabelRecipe& recipe,
                  const std::string& out_dir, const std::string& resume_from = "");

// Training state persistence: one checkpoint container holding the model
// parameters plus optimizer entries under an "optim." prefix (moments, step
// counter, next epoch index). A container without optimizer entries loads as
// a fresh optimizer at epoch 0.
void save_train_state(const std::string& path, const ModelParams& params,
                      const AdamState& state, int next_epoch);
void load_train_state(const std::string& path, const NetworkConfig& net,
                      ModelParams& params, AdamState& state, int& next_epoch);

// Model-only view of a checkpoint: optimizer entries, if present, are
// dropped. Accepts both plain model checkpoints and training states.
ModelParams load_model_params(const std::string& path, const NetworkConfig& net);

}  // namespace a2r
