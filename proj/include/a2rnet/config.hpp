#pragma once

#include <string>

#include "a2rnet/attack.hpp"
#include "a2rnet/labels.hpp"
#include "a2rnet/model.hpp"
#include "a2rnet/train.hpp"

namespace a2r {

// Everything a command-line run needs, grouped the way the config file is:
// [network] / [attention] describe the model, [train] / [budget] / [weights]
// the optimization, [label] the supervision recipe, [paths] the inputs.
struct RunConfig {
  NetworkConfig network;
  TrainConfig train;  // embeds the budget and the loss weights
  LabelRecipe label;
  std::string manifest_path;    // [paths] manifest
  std::string checkpoint_path;  // [paths] checkpoint
  // One budget serves two roles: attack generation inside training (3
  // iterations unless stated) and evaluation-time attacks (20 unless
  // stated). An explicit `iterations` key pins both roles to that value.
  bool budget_iterations_explicit = false;
};

// Parses UTF-8 `key = value` lines grouped by [section] headers. '#' starts
// a comment; later assignments win. Unknown sections or keys and malformed
// values raise validation errors naming the offender and line.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Applies one `section.key=value` assignment on top of a parsed config.
void apply_override(RunConfig& cfg, const std::string& assignment);

// Canonical text listing every section and key with full-precision numbers;
// parsing it back reproduces `cfg` bit-identically. Because the output
// states `iterations` explicitly, it pins the budget role split (see
// RunConfig), which is what makes a saved resolved config replayable.
std::string serialize_run_config(const RunConfig& cfg);

// Effective budgets for the two roles (see RunConfig).
PerturbationBudget train_budget(const RunConfig& cfg);
PerturbationBudget eval_budget(const RunConfig& cfg);

}  // namespace a2r
