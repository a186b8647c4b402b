#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "a2rnet/attack.hpp"
#include "a2rnet/common.hpp"
#include "a2rnet/config.hpp"
#include "a2rnet/grad_check.hpp"
#include "a2rnet/image_io.hpp"
#include "a2rnet/labels.hpp"
#include "a2rnet/metrics.hpp"
#include "a2rnet/model.hpp"
#include "a2rnet/ops.hpp"
#include "a2rnet/tensor.hpp"
#include "a2rnet/train.hpp"

namespace fs = std::filesystem;
using namespace a2r;

namespace {

// Flags shared by every subcommand.
struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool out_required) {
  cmd->add_option("--config", o.config_path, "Config file ([section] key = value lines)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--override", o.overrides,
                  "section.key=value applied after the config file (repeatable)");
  auto* out = cmd->add_option("--out", o.out_dir, "Output directory");
  if (out_required) out->required();
  cmd->add_option("--seed", o.seed, "Shorthand for --override train.seed=SEED")
      ->each([&o](const std::string&) { o.seed_set = true; });
}

// File settings, then overrides in order, then the dedicated seed flag.
RunConfig resolve(const CommonOpts& o) {
  RunConfig run = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  for (const std::string& a : o.overrides) apply_override(run, a);
  if (o.seed_set) run.train.seed = o.seed;
  return run;
}

void require_manifest(const RunConfig& run) {
  if (run.manifest_path.empty()) {
    throw ValidationError("paths.manifest is required for this command");
  }
}

void require_checkpoint(const RunConfig& run) {
  if (run.checkpoint_path.empty()) {
    throw ValidationError("paths.checkpoint is required for this command");
  }
}

// Provenance written next to every run's outputs: the fully-resolved config
// (replayable via --config) and the list of files the run produced.
void write_provenance(const fs::path& out_dir, const RunConfig& resolved,
                      const std::vector<std::string>& produced) {
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir / "resolved_config.ini", std::ios::binary);
    f << serialize_run_config(resolved);
    if (!f) throw Error("cannot write " + (out_dir / "resolved_config.ini").string());
  }
  std::ofstream m(out_dir / "produced_files.txt", std::ios::binary);
  m << "resolved_config.ini\n";
  for (const std::string& p : produced) m << p << "\n";
  if (!m) throw Error("cannot write " + (out_dir / "produced_files.txt").string());
}

ModelParams load_model(const RunConfig& run) {
  return load_model_params(run.checkpoint_path, run.network);
}

int cmd_train(const CommonOpts& o) {
  RunConfig run = resolve(o);
  validate_config(run.network);
  validate_train_config(run.train);
  validate_recipe(run.label);
  require_manifest(run);
  const DatasetManifest manifest = load_manifest(run.manifest_path);
  const TrainResult res = train(run.network, run.train, manifest, run.label, o.out_dir,
                                run.checkpoint_path);
  write_provenance(o.out_dir, run,
                   {fs::path(res.checkpoint_path).filename().string(),
                    fs::path(res.log_path).filename().string()});
  std::cout << "trained " << res.epochs.size() << " epoch(s) -> " << res.checkpoint_path
            << "\n";
  return 0;
}

int cmd_fuse(const CommonOpts& o) {
  RunConfig run = resolve(o);
  validate_config(run.network);
  require_manifest(run);
  require_checkpoint(run);
  const DatasetManifest manifest = load_manifest(run.manifest_path);
  const ModelParams params = load_model(run);
  fs::create_directories(fs::path(o.out_dir) / "fused");
  std::vector<std::string> produced;
  NoTapeScope inference;
  for (const ManifestEntry& entry : manifest.entries) {
    const ImagePair pair = load_pair(entry);
    const Tensor fused = quantize_unit(forward(params, pair, run.network));
    const std::string rel = "fused/" + pair.id + ".pgm";
    save_pgm((fs::path(o.out_dir) / rel).string(), fused);
    produced.push_back(rel);
    if (pair.has_color()) {
      const std::string rel_color = "fused/" + pair.id + ".ppm";
      recombine_to_ppm((fs::path(o.out_dir) / rel_color).string(), fused, pair.vis_cbcr);
      produced.push_back(rel_color);
    }
  }
  write_provenance(o.out_dir, run, produced);
  std::cout << "fused " << manifest.size() << " pair(s) -> " << o.out_dir << "/fused\n";
  return 0;
}

int cmd_attack(const CommonOpts& o) {
  RunConfig run = resolve(o);
  validate_config(run.network);
  validate_recipe(run.label);
  require_manifest(run);
  require_checkpoint(run);
  // Pin the evaluation-role iteration count so the resolved config replays
  // this command exactly.
  run.train.budget = eval_budget(run);
  run.budget_iterations_explicit = true;
  const PerturbationBudget budget = run.train.budget;
  validate_budget(budget);
  const DatasetManifest manifest = load_manifest(run.manifest_path);
  const ModelParams params = load_model(run);
  fs::create_directories(fs::path(o.out_dir) / "adv");
  fs::create_directories(fs::path(o.out_dir) / "fused");
  fs::create_directories(fs::path(o.out_dir) / "traces");
  std::vector<std::string> produced;
  for (const ManifestEntry& entry : manifest.entries) {
    const ImagePair pair = load_pair(entry);
    const Tensor label = generate_label(pair, run.label);
    const AdversarialPair adv =
        pgd_attack(params, pair, label, budget, run.train.weights, run.network);
    NoTapeScope inference;
    const Tensor adv_ir = add(pair.ir, adv.delta_ir);
    const Tensor adv_vis = add(pair.vis_y, adv.delta_vis);
    const Tensor fused =
        quantize_unit(forward_sources(params, adv_ir, adv_vis, run.network));
    const std::string rel_ir = "adv/" + pair.id + "_ir.pgm";
    const std::string rel_vis = "adv/" + pair.id + "_vis.pgm";
    const std::string rel_fused = "fused/" + pair.id + "_attacked.pgm";
    const std::string rel_trace = "traces/" + pair.id + ".csv";
    save_pgm((fs::path(o.out_dir) / rel_ir).string(), adv_ir);
    save_pgm((fs::path(o.out_dir) / rel_vis).string(), adv_vis);
    save_pgm((fs::path(o.out_dir) / rel_fused).string(), fused);
    std::ofstream trace(fs::path(o.out_dir) / rel_trace, std::ios::binary);
    trace << "iteration,loss\n" << std::setprecision(17);
    for (std::size_t k = 0; k < adv.loss_trace.size(); ++k) {
      trace << k << "," << adv.loss_trace[k] << "\n";
    }
    if (!trace) throw Error("cannot write " + rel_trace);
    produced.insert(produced.end(), {rel_ir, rel_vis, rel_fused, rel_trace});
  }
  write_provenance(o.out_dir, run, produced);
  std::cout << "attacked " << manifest.size() << " pair(s) -> " << o.out_dir << "\n";
  return 0;
}

int cmd_evaluate(const CommonOpts& o) {
  RunConfig run = resolve(o);
  validate_config(run.network);
  validate_recipe(run.label);
  require_manifest(run);
  require_checkpoint(run);
  run.train.budget = eval_budget(run);
  run.budget_iterations_explicit = true;
  validate_budget(run.train.budget);
  const DatasetManifest manifest = load_manifest(run.manifest_path);
  const MetricsReport report = evaluate(run.checkpoint_path, manifest, run.network,
                                        run.train.budget, run.label, run.train.weights,
                                        o.out_dir);
  std::vector<std::string> produced = {"report.csv", "aggregate.json"};
  for (const ManifestEntry& entry : manifest.entries) {
    produced.push_back("fused/" + entry.id + "_clean.pgm");
    produced.push_back("fused/" + entry.id + "_attacked.pgm");
    produced.push_back("waveforms/" + entry.id + ".csv");
  }
  write_provenance(o.out_dir, run, produced);
  std::cout << "evaluated " << manifest.size() << " pair(s), " << report.rows.size()
            << " metric rows -> " << o.out_dir << "/report.csv\n";
  return 0;
}

int cmd_label_gen(const CommonOpts& o) {
  RunConfig run = resolve(o);
  validate_recipe(run.label);
  require_manifest(run);
  const DatasetManifest manifest = load_manifest(run.manifest_path);
  fs::create_directories(fs::path(o.out_dir) / "labels");
  std::vector<std::string> produced;
  for (const ManifestEntry& entry : manifest.entries) {
    const ImagePair pair = load_pair(entry);
    const Tensor label = generate_label(pair, run.label);
    const std::string rel = "labels/" + pair.id + ".pgm";
    save_pgm((fs::path(o.out_dir) / rel).string(), label);
    produced.push_back(rel);
  }
  write_provenance(o.out_dir, run, produced);
  std::cout << "labeled " << manifest.size() << " pair(s) -> " << o.out_dir << "/labels\n";
  return 0;
}

int cmd_gradcheck(const CommonOpts& o) {
  const std::uint64_t seed = o.seed_set ? o.seed : 20240817ULL;
  const std::vector<GradSuiteEntry> entries = run_gradient_suite(seed);
  std::size_t failures = 0;
  std::ostringstream csv;
  csv << "name,max_rel_err,tolerance,pass\n" << std::setprecision(17);
  for (const GradSuiteEntry& e : entries) {
    std::cout << std::left << std::setw(44) << e.name << std::scientific
              << std::setprecision(3) << e.max_rel_err << " (tol " << e.tolerance
              << ") " << (e.pass ? "ok" : "FAIL") << std::defaultfloat << "\n";
    csv << e.name << "," << e.max_rel_err << "," << e.tolerance << ","
        << (e.pass ? "true" : "false") << "\n";
    if (!e.pass) ++failures;
  }
  if (!o.out_dir.empty()) {
    fs::create_directories(o.out_dir);
    std::ofstream f(fs::path(o.out_dir) / "gradcheck_report.csv", std::ios::binary);
    f << csv.str();
    if (!f) throw Error("cannot write gradcheck_report.csv");
    write_provenance(o.out_dir, resolve(o), {"gradcheck_report.csv"});
  }
  if (failures != 0) {
    std::cerr << failures << " of " << entries.size() << " gradient checks failed\n";
    return 2;
  }
  std::cout << "all " << entries.size() << " gradient checks passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarially robust infrared/visible image fusion"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  CommonOpts train_o, attack_o, fuse_o, eval_o, label_o, grad_o;
  CLI::App* c_train =
      app.add_subcommand("train", "Train a fusion model (optionally adversarially)");
  add_common(c_train, train_o, true);
  CLI::App* c_attack =
      app.add_subcommand("attack", "Generate budgeted adversarial inputs and traces");
  add_common(c_attack, attack_o, true);
  CLI::App* c_fuse = app.add_subcommand("fuse", "Fuse image pairs with a checkpoint");
  add_common(c_fuse, fuse_o, true);
  CLI::App* c_eval =
      app.add_subcommand("evaluate", "Metric report under clean and attacked conditions");
  add_common(c_eval, eval_o, true);
  CLI::App* c_label = app.add_subcommand("label-gen", "Write supervision targets");
  add_common(c_label, label_o, true);
  CLI::App* c_grad =
      app.add_subcommand("gradcheck", "Finite-difference check of every operator");
  add_common(c_grad, grad_o, false);

  try {
    app.parse(argc, argv);
    if (app.got_subcommand(c_train)) return cmd_train(train_o);
    if (app.got_subcommand(c_attack)) return cmd_attack(attack_o);
    if (app.got_subcommand(c_fuse)) return cmd_fuse(fuse_o);
    if (app.got_subcommand(c_eval)) return cmd_evaluate(eval_o);
    if (app.got_subcommand(c_label)) return cmd_label_gen(label_o);
    return cmd_gradcheck(grad_o);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
