#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fbsde/nn.hpp"
#include "fbsde/problems.hpp"
#include "fbsde/rollout.hpp"

namespace fbsde {

enum class Method { Robust, Naive, NaiveFixedY0 };
enum class VarY0Source { BatchB, BatchA };

Method method_from_string(const std::string& s);
std::string to_string(Method m);

struct TrainConfig {
  Method method = Method::Robust;
  double lambda = 0.0;
  int M_train = 1 << 16;
  int M_batch = 1 << 9;
  int K_epoch = 8;
  int N = 20;
  std::uint64_t seed = 1;
  double lr_base = 0.1;
  bool shuffle = true;
  VarY0Source var_y0 = VarY0Source::BatchB;
  std::optional<double> fixed_y0;  // required for NaiveFixedY0
  int workers = 1;

  int k_batch() const { return M_train / (2 * M_batch); }
};

struct HistoryRow {
  int epoch = 0;
  int batch = 0;
  double loss = 0.0, cost_term = 0.0, var_term = 0.0, lr = 0.0,
         wall_time = 0.0;
};

struct TrainHistory {
  std::vector<HistoryRow> rows;
};

struct TrainResult {
  NetworkStack nets;
  TrainHistory history;
};

// Loss values over already-simulated batches (the printed forms).
double robust_loss(const PathBatch& batchA, const PathBatch& batchB,
                   double lambda,
                   VarY0Source src = VarY0Source::BatchB);
double naive_loss(const PathBatch& batch, double y0);
// Same quantity through the reconstructed terminal values Y_N - g(X_N).
double naive_loss_terminal_form(const PathBatch& batch, double y0);

struct UpdateStats {
  double loss = 0.0, cost_term = 0.0, var_term = 0.0;
};

// One optimizer step's loss and parameter gradient (exposed for the
// finite-difference property tests).
UpdateStats robust_update_grads(const ProblemSpec& problem,
                                const NetworkStack& nets,
                                const TimeGrid& grid, const Increments& incA,
                                const Increments& incB, double lambda,
                                VarY0Source src, int workers,
                                GradBlocks* out);
UpdateStats naive_update_grads(const ProblemSpec& problem,
                               const NetworkStack& nets, const TimeGrid& grid,
                               const Increments& inc, double y0, bool train_y0,
                               int workers, GradBlocks* out);

TrainResult train(const TrainConfig& cfg, const ProblemSpec& problem);

struct EstimateResult {
  double y0h = 0.0;
  double se = 0.0;
};

EstimateResult estimate_y0(const NetworkStack& nets,
                           const ProblemSpec& problem, const TimeGrid& grid,
                           int M_eval, std::uint64_t seed, int workers = 1);

struct LandscapePoint {
  double y0 = 0.0, mse = 0.0, cost = 0.0;
};

// Trains the maps with y0 frozen at every grid value (same initialization
// seed each time) and evaluates MSE(y0) and the cost J on fresh paths.
std::vector<LandscapePoint> landscape(const ProblemSpec& problem,
                                      const std::vector<double>& y0_grid,
                                      const TrainConfig& cfg, int M_eval);

}  // namespace fbsde
