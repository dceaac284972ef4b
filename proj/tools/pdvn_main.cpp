#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pdvn/pipeline.hpp"

namespace {

using pdvn::pipeline::RunConfig;

void add_common_options(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--seed", cfg.seed, "Random seed");
  cmd->add_option("--workers", cfg.workers, "Worker threads (0 = hardware)");
  cmd->add_option("--world", cfg.world_file, "World file path");
  cmd->add_option("--out", cfg.out_dir, "Output directory");
  cmd->add_option("--timing", [&cfg](const std::vector<std::string>& v) {
        if (v[0] == "wall") {
          cfg.with_timing = true;
        } else if (v[0] == "none") {
          cfg.with_timing = false;
        } else {
          return false;
        }
        return true;
      },
      "Timing column in CSV logs: wall | none (none keeps logs bit-deterministic)");
}

void add_planning_options(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--c-puct", cfg.c_puct, "PUCT exploration coefficient");
  cmd->add_option("--simulations", cfg.simulations, "Simulations per root move");
  cmd->add_option("--max-depth", cfg.max_depth, "Route depth limit");
  cmd->add_option("--top-k", cfg.top_k, "Reference top-k width");
  cmd->add_option("--c-rxn", cfg.c_rxn, "Per-reaction cost");
  cmd->add_option("--c-dead", cfg.c_dead, "Dead-end penalty");
  cmd->add_option("--root-order", cfg.root_order, "Pending-root order: fifo | lifo");
  cmd->add_option("--tree-reuse", cfg.tree_reuse, "Keep subtree statistics across root moves");
}

int run(int argc, char** argv) {
  CLI::App app{"Retrosynthetic planning with dual value networks on a synthetic rewrite world"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Config file: key = value lines with [section] headers");
  app.allow_config_extras(CLI::config_extras_mode::error);

  RunConfig cfg;
  std::vector<std::string> report_files;

  auto* gen = app.add_subcommand("gen-world", "Generate a seeded rewrite-rule world");
  add_common_options(gen, cfg);
  gen->add_option("--rules", cfg.n_rules, "Number of rewrite rules");
  gen->add_option("--poison-frac", cfg.poison_rule_frac, "Fraction of rules with poison output");

  auto* pre = app.add_subcommand("pretrain",
                                 "Sample ground-truth routes and pretrain the reference model");
  add_common_options(pre, cfg);
  pre->add_option("--targets", cfg.train_targets, "Distinct training targets to produce");
  pre->add_option("--heldout", cfg.heldout_targets, "Distinct held-out targets to produce");
  pre->add_option("--route-depth", cfg.route_max_depth, "Maximum sampled route depth");
  pre->add_option("--sl-epochs", cfg.sl_epochs, "Supervised epochs");
  pre->add_option("--sl-batch", cfg.sl_batch, "Supervised mini-batch size");
  pre->add_option("--lr", cfg.lr, "Learning rate");

  auto* train = app.add_subcommand("train", "Alternate planning and updating phases");
  add_common_options(train, cfg);
  add_planning_options(train, cfg);
  train->add_option("--reference", cfg.reference_file, "Pretrained reference checkpoint");
  train->add_option("--targets", cfg.targets_file, "Training target list");
  train->add_option("--mode", cfg.mode, "pdvn | single-value | no-cost | self-imitation");
  train->add_option("--epochs", cfg.epochs, "Passes over the training targets");
  train->add_option("--batch", cfg.target_batch, "Target molecules per planning batch");
  train->add_option("--mini-batch", cfg.mini_batch, "Update mini-batch size");
  train->add_option("--lr", cfg.lr, "Learning rate");
  train->add_option("--alpha", cfg.alpha, "Unsolved-target penalty factor");
  train->add_option("--grad-passes", cfg.grad_passes, "Update passes over pooled examples");
  train->add_option("--budget", cfg.budget, "Self-imitation planner budget");
  train->add_option("--trace-dir", cfg.trace_dir, "Write per-episode trace logs here");

  auto* eval = app.add_subcommand("eval", "Evaluate planners on held-out targets");
  add_common_options(eval, cfg);
  add_planning_options(eval, cfg);
  eval->add_option("--reference", cfg.reference_file, "Reference checkpoint (for @ref planners)");
  eval->add_option("--model", cfg.model_dir, "Trained checkpoint bundle (for @trained planners)");
  eval->add_option("--targets", cfg.targets_file, "Evaluation target list");
  eval->add_option("--budget", cfg.budget, "Model-call budget");
  eval->add_option("--checkpoints", cfg.checkpoints, "Success-rate checkpoints")
      ->delimiter(',');
  eval->add_option("--planner", cfg.planners,
                   "Planner spec NAME=KIND@MODEL; kinds: greedy retro0 retro-pdvn retro-syn "
                   "retro-single; models: ref trained")
      ->take_all();

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate every mode");
  add_common_options(ablate, cfg);
  add_planning_options(ablate, cfg);
  ablate->add_option("--reference", cfg.reference_file, "Pretrained reference checkpoint");
  ablate->add_option("--targets", cfg.targets_file, "Training target list");
  ablate->add_option("--eval-targets", cfg.targets_file, "(alias of --targets for eval)");
  ablate->add_option("--epochs", cfg.epochs, "Passes over the training targets");
  ablate->add_option("--batch", cfg.target_batch, "Target molecules per planning batch");
  ablate->add_option("--mini-batch", cfg.mini_batch, "Update mini-batch size");
  ablate->add_option("--lr", cfg.lr, "Learning rate");
  ablate->add_option("--alpha", cfg.alpha, "Unsolved-target penalty factor");
  ablate->add_option("--budget", cfg.budget, "Model-call budget");

  auto* report = app.add_subcommand("report", "Print summary tables for eval CSV files");
  report->add_option("files", report_files, "eval.csv paths")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto r = pdvn::pipeline::cmd_gen_world(cfg);
      std::cout << "world written to " << r.world_path.string() << "\n";
    } else if (pre->parsed()) {
      auto r = pdvn::pipeline::cmd_pretrain(cfg);
      std::cout << "reference: " << r.reference_path.string() << "\n"
                << "targets:   " << r.targets_path.string() << "\n"
                << "held-out:  " << r.heldout_path.string() << "\n"
                << r.report.to_text();
    } else if (train->parsed()) {
      auto r = pdvn::pipeline::cmd_train(cfg);
      std::cout << "checkpoint bundle: " << r.bundle_dir.string() << "\n"
                << "training log:      " << r.log_path.string() << "\n";
      if (!r.log.rows.empty()) {
        std::printf("final batch solve rate: %.4f\n", r.log.rows.back().solve_rate);
      }
    } else if (eval->parsed()) {
      auto r = pdvn::pipeline::cmd_eval(cfg);
      std::cout << r.report.to_summary() << "report: " << r.csv_path.string() << "\n";
    } else if (ablate->parsed()) {
      auto r = pdvn::pipeline::cmd_ablate(cfg);
      std::cout << "ablation summary: " << r.summary_path.string() << "\n";
    } else if (report->parsed()) {
      std::vector<std::filesystem::path> paths(report_files.begin(), report_files.end());
      std::cout << pdvn::pipeline::cmd_report(paths);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
