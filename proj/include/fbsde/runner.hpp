#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fbsde {

struct RunConfig {
  std::string subcommand;
  std::string preset = "lq2d";
  std::string problem_file;
  std::vector<int> N_list;
  int N = 20;
  std::optional<double> lambda;
  std::string method = "robust";
  std::optional<double> fixed_y0;  // naive-fixed-y0 only
  int M_train = 1 << 16;
  int M_batch = 1 << 9;
  int K_epoch = 8;
  int M_eval = 1 << 17;
  std::uint64_t seed = 1u;
  std::string out_dir = "out";
  bool paper_scale = false;
  int workers = 1;
  std::string z_convention = "dxv";    // dxv | sigma-t
  std::string variance_y0 = "batchB";  // batchB | batchA
  bool shuffle = true;
  std::vector<double> y0_grid;
  std::string checkpoint;
  int steps_fine = 80 * 256;
  int land_epochs = 5;
};

// Structured results so the acceptance gate can assert on the same numbers
// that land in the artifacts.
struct TrainOutcome {
  double y0h = 0.0, se = 0.0, terminal = 0.0, final_loss = 0.0;
  std::optional<double> y0_trained;  // naive method only
  std::optional<double> y0_ref, err_y0;
  std::string checkpoint_path, history_path, summary_path;
};

struct ConvergeRowOut {
  int N = 0;
  double h = 0.0, y0h = 0.0, err_y0 = 0.0, terminal = 0.0;
  std::optional<double> err_x_s, err_y_s, err_z_h;  // LQ rows only
};

struct ConvergeOutcome {
  std::vector<ConvergeRowOut> rows;
  std::vector<double> eoc_y0, eoc_terminal, eoc_x, eoc_y, eoc_z;
  double y0_ref = 0.0;
  int N_ref = 0;
  std::string csv_path;
};

struct LandscapePointOut {
  double y0 = 0.0, mse = 0.0, cost = 0.0;
};

struct LandscapeOutcome {
  std::vector<LandscapePointOut> points;
  std::optional<double> y0_ref;
  double argmin_y0 = 0.0;  // grid point with the smallest mse
  std::string csv_path;
};

struct ReferenceOutcome {
  double v0 = 0.0;
  std::string csv_path;
};

struct BandsOutcome {
  int N = 0, M = 0;
  std::optional<double> y_cover;  // fraction of nodes whose Y band contains
                                  // the reference mean (LQ only)
  std::vector<std::string> csv_paths;
};

TrainOutcome exec_train(const RunConfig& cfg);
ConvergeOutcome exec_converge(const RunConfig& cfg);
LandscapeOutcome exec_landscape(const RunConfig& cfg);
ReferenceOutcome exec_reference(const RunConfig& cfg);
BandsOutcome exec_bands(const RunConfig& cfg);

int run_train(const RunConfig& cfg);
int run_converge(const RunConfig& cfg);
int run_landscape(const RunConfig& cfg);
int run_reference(const RunConfig& cfg);
int run_bands(const RunConfig& cfg);

// Dispatch on cfg.subcommand.
int run_config(const RunConfig& cfg);

}  // namespace fbsde
