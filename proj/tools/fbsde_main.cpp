#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fbsde/runner.hpp"

int main(int argc, char** argv) {
  fbsde::RunConfig cfg;

  CLI::App app{
      "FBSDE solver lab: robust deep solvers for coupled forward-backward "
      "SDEs with semi-analytic LQ benchmarks"};
  app.require_subcommand(1);
  app.fallthrough();
  // Declarative key-value config file; explicitly passed flags win.
  app.set_config("--config", "", "Key-value config file (flags override it)");

  app.add_option("--preset", cfg.preset,
                 "Problem preset: lq1d | lq2d | lq6d | nl3d")
      ->capture_default_str();
  app.add_option("--problem-file", cfg.problem_file,
                 "Custom problem JSON (overrides --preset)");
  app.add_option("--N", cfg.N, "Time steps")->capture_default_str();
  app.add_option("--N-list", cfg.N_list,
                 "Strictly increasing step counts for converge")
      ->delimiter(',');
  app.add_option("--lambda", cfg.lambda,
                 "Variance weight (default: preset value)");
  app.add_option("--method", cfg.method,
                 "robust | naive | naive-fixed-y0")
      ->capture_default_str();
  app.add_option("--fixed-y0", cfg.fixed_y0,
                 "Frozen initial value for naive-fixed-y0");
  app.add_option("--M-train", cfg.M_train, "Training pool size")
      ->capture_default_str();
  app.add_option("--M-batch", cfg.M_batch, "Batch size per update")
      ->capture_default_str();
  app.add_option("--K-epoch", cfg.K_epoch, "Epochs")->capture_default_str();
  app.add_option("--M-eval", cfg.M_eval, "Evaluation paths")
      ->capture_default_str();
  app.add_option("--seed", cfg.seed, "Base seed")->capture_default_str();
  app.add_option("--out", cfg.out_dir, "Output directory")
      ->capture_default_str();
  app.add_flag("--paper-scale", cfg.paper_scale,
               "Use M_train=2^20, K_epoch=15 instead of the desk defaults");
  app.add_option("--workers", cfg.workers,
                 "Worker threads (never changes results)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--z-convention", cfg.z_convention,
                 "Reported Z convention: dxv | sigma-t")
      ->check(CLI::IsMember({"dxv", "sigma-t"}))
      ->capture_default_str();
  app.add_option("--variance-y0", cfg.variance_y0,
                 "Variance centering batch: batchB | batchA")
      ->check(CLI::IsMember({"batchB", "batchA"}))
      ->capture_default_str();
  app.add_flag("--no-shuffle",
               [&cfg](std::int64_t) { cfg.shuffle = false; },
               "Disable the per-epoch pool shuffle");
  app.add_option("--y0-grid", cfg.y0_grid,
                 "Landscape y0 grid values (default: reference Y0 +- 0.5, 9 "
                 "points)")
      ->delimiter(',');
  app.add_option("--checkpoint", cfg.checkpoint,
                 "Trained checkpoint (bands)");
  app.add_option("--steps-fine", cfg.steps_fine,
                 "Riccati fine-grid steps")
      ->capture_default_str();
  app.add_option("--land-epochs", cfg.land_epochs,
                 "Epochs per landscape grid point")
      ->capture_default_str();

  app.add_subcommand("train", "Train one Markov-map stack and summarize");
  app.add_subcommand("converge",
                     "Error/EOC table over an N-list with common noise");
  app.add_subcommand("landscape",
                     "MSE(y0) and cost over a frozen-y0 grid");
  app.add_subcommand("reference",
                     "Semi-analytic value function and V(0,x0)");
  app.add_subcommand("bands",
                     "Percentile bands of X, Y, Z for a checkpoint");

  CLI11_PARSE(app, argc, argv);
  cfg.subcommand = app.get_subcommands().front()->get_name();

  try {
    return fbsde::run_config(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
