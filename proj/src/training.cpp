#include "fbsde/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <memory>
#include <numeric>

namespace fbsde {

namespace {

constexpr std::uint64_t kSeedPool = 0x706f6f6c;
constexpr std::uint64_t kSeedInit = 0x696e6974;
constexpr std::uint64_t kSeedShuffle = 0x73687566;
constexpr std::uint64_t kSeedLandEval = 0x6c657631;

double column_mean(const Mat& row) { return row.mean(); }

double centered_square_sum(const Mat& row, double center) {
  return (row.array() - center).square().sum();
}

}  // namespace

Method method_from_string(const std::string& s) {
  if (s == "robust") return Method::Robust;
  if (s == "naive") return Method::Naive;
  if (s == "naive-fixed-y0") return Method::NaiveFixedY0;
  fail("unknown method '" + s +
       "'; valid: robust, naive, naive-fixed-y0");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::Robust: return "robust";
    case Method::Naive: return "naive";
    case Method::NaiveFixedY0: return "naive-fixed-y0";
  }
  return "?";
}

double robust_loss(const PathBatch& batchA, const PathBatch& batchB,
                   double lambda, VarY0Source src) {
  const double m = static_cast<double>(batchB.M);
  const double cost = column_mean(batchA.ycal0);
  const double center = src == VarY0Source::BatchB
                            ? column_mean(batchB.ycal0)
                            : cost;
  const double var = centered_square_sum(batchB.ycal0, center) / m;
  return cost + lambda * var;
}

double naive_loss(const PathBatch& batch, double y0) {
  return centered_square_sum(batch.ycal0, y0) / batch.M;
}

double naive_loss_terminal_form(const PathBatch& batch, double y0) {
  PathBatch copy = batch;
  reconstruct_y(copy, y0);
  const Mat gap = copy.Y.row(copy.grid.N) - copy.gterm.row(0);
  return gap.cwiseProduct(gap).sum() / copy.M;
}

namespace {

// Forward-simulates a batch on per-chunk tapes, then backpropagates a caller
// supplied seed row dL/d(ycal0) through every chunk and merges the parameter
// gradients in chunk order.
class TapeBatch {
 public:
  TapeBatch(const ProblemSpec& problem, const NetworkStack& nets,
            const TimeGrid& grid, const Increments& inc, int workers)
      : problem_(problem), nets_(nets), workers_(workers) {
    const int M = inc.M;
    nchunks_ = (M + kChunkCols - 1) / kChunkCols;
    tasks_.resize(nchunks_);
    ycal_.resize(1, M);

    parallel_for(nchunks_, workers_, [&](int c) {
      const int col0 = c * kChunkCols;
      const int cols = std::min(kChunkCols, M - col0);
      auto task = std::make_unique<Task>();
      task->col0 = col0;
      task->cols = cols;
      TapeEngine e{&task->tape};
      task->handles.reserve(nets_.nets.size());
      for (const MlpParams& p : nets_.nets)
        task->handles.push_back(lift_net(e, p));
      detail::MlpPolicy<TapeEngine> policy{&task->handles};
      RolloutStore store{false, false, false};
      task->refs =
          detail::roll_chunk(e, problem_, grid, inc, col0, cols, policy,
                             store);
      ycal_.middleCols(col0, cols) = e.val(task->refs.ycal);
      tasks_[c] = std::move(task);
    });
  }

  const Mat& ycal() const { return ycal_; }

  GradBlocks backward(const Mat& seeds) {
    require(seeds.rows() == 1 && seeds.cols() == ycal_.cols(),
            "TapeBatch: seed row has the wrong shape");
    std::vector<GradBlocks> slots(nchunks_);
    parallel_for(nchunks_, workers_, [&](int c) {
      Task& task = *tasks_[c];
      Mat seed = seeds.middleCols(task.col0, task.cols);
      std::vector<Mat> adj = task.tape.backward(task.refs.ycal, seed);
      GradBlocks g = GradBlocks::zeros_like(nets_);
      for (std::size_t k = 0; k < task.handles.size(); ++k) {
        Mat* dst[6] = {&g.nets[k].W1, &g.nets[k].b1, &g.nets[k].W2,
                       &g.nets[k].b2, &g.nets[k].W3, &g.nets[k].b3};
        for (int i = 0; i < 6; ++i) {
          const Mat& a = adj[task.handles[k][i].idx];
          if (a.size()) *dst[i] = a;
        }
      }
      slots[c] = std::move(g);
      tasks_[c].reset();
    });
    GradBlocks total = GradBlocks::zeros_like(nets_);
    for (int c = 0; c < nchunks_; ++c) total.accumulate(slots[c]);
    return total;
  }

 private:
  struct Task {
    ad::Tape tape;
    std::vector<std::array<ad::VarRef, 6>> handles;
    detail::ChunkRefs<TapeEngine> refs;
    int col0 = 0, cols = 0;
  };

  const ProblemSpec& problem_;
  const NetworkStack& nets_;
  int workers_ = 1;
  int nchunks_ = 0;
  std::vector<std::unique_ptr<Task>> tasks_;
  Mat ycal_;
};

void check_finite_loss(double loss, const char* what) {
  if (!std::isfinite(loss))
    fail(std::string("training: non-finite ") + what);
}

}  // namespace

UpdateStats robust_update_grads(const ProblemSpec& problem,
                                const NetworkStack& nets,
                                const TimeGrid& grid, const Increments& incA,
                                const Increments& incB, double lambda,
                                VarY0Source src, int workers,
                                GradBlocks* out) {
  const double mA = static_cast<double>(incA.M);
  const double mB = static_cast<double>(incB.M);

  TapeBatch batchA(problem, nets, grid, incA, workers);
  const double cost = column_mean(batchA.ycal());
  check_finite_loss(cost, "cost term (batch A mean stochastic cost)");

  UpdateStats stats;
  stats.cost_term = cost;

  GradBlocks grads = GradBlocks::zeros_like(nets);
  {
    Mat seedsA = Mat::Constant(1, incA.M, 1.0 / mA);
    if (lambda > 0.0 && src == VarY0Source::BatchA) {
      // The variance center is batch A's mean; its gradient flows back into
      // every batch-A path through that mean.
      TapeBatch batchB(problem, nets, grid, incB, workers);
      const Mat centered = batchB.ycal().array() - cost;
      const double var = centered.cwiseProduct(centered).sum() / mB;
      stats.var_term = lambda * var;
      seedsA.array() += -(2.0 * lambda / mB) * centered.sum() / mA;
      grads.accumulate(batchA.backward(seedsA));
      Mat seedsB = (2.0 * lambda / mB) * centered;
      grads.accumulate(batchB.backward(seedsB));
    } else if (lambda > 0.0) {
      TapeBatch batchB(problem, nets, grid, incB, workers);
      const double center = column_mean(batchB.ycal());
      const Mat centered = batchB.ycal().array() - center;
      const double var = centered.cwiseProduct(centered).sum() / mB;
      stats.var_term = lambda * var;
      // d/dycal_j of sum_m (ycal_m - mean)^2, with the mean's own
      // dependence kept (it vanishes only in exact arithmetic).
      const double corr = centered.sum() / mB;
      grads.accumulate(batchA.backward(seedsA));
      Mat seedsB = (2.0 * lambda / mB) * (centered.array() - corr).matrix();
      grads.accumulate(batchB.backward(seedsB));
    } else {
      stats.var_term = 0.0;
      grads.accumulate(batchA.backward(seedsA));
    }
  }

  stats.loss = stats.cost_term + stats.var_term;
  check_finite_loss(stats.loss, "robust loss");
  if (out) *out = std::move(grads);
  return stats;
}

UpdateStats naive_update_grads(const ProblemSpec& problem,
                               const NetworkStack& nets, const TimeGrid& grid,
                               const Increments& inc, double y0, bool train_y0,
                               int workers, GradBlocks* out) {
  const double m = static_cast<double>(inc.M);
  TapeBatch batch(problem, nets, grid, inc, workers);
  const Mat gap = batch.ycal().array() - y0;
  const double mse = gap.cwiseProduct(gap).sum() / m;
  check_finite_loss(mse, "naive loss");

  const double cost = column_mean(batch.ycal());
  UpdateStats stats;
  stats.loss = mse;
  stats.cost_term = cost;
  stats.var_term = mse - (cost - y0) * (cost - y0);

  Mat seeds = (2.0 / m) * gap;
  GradBlocks grads = batch.backward(seeds);
  grads.y0 = train_y0 ? -(2.0 / m) * gap.sum() : 0.0;
  if (out) *out = std::move(grads);
  return stats;
}

namespace {

std::vector<int> epoch_permutation(int M, bool shuffle, std::uint64_t seed,
                                   int epoch) {
  std::vector<int> perm(M);
  std::iota(perm.begin(), perm.end(), 0);
  if (shuffle) {
    std::mt19937_64 rng =
        make_rng(derive_seed(seed, kSeedShuffle + static_cast<std::uint64_t>(
                                                      epoch)));
    std::shuffle(perm.begin(), perm.end(), rng);
  }
  return perm;
}

double effective_lr(double lr_base, int epoch) {
  return lr_base * (lr_schedule(epoch) / 0.1);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const ProblemSpec& problem) {
  require(cfg.M_batch >= 1 && cfg.M_train >= 1 && cfg.N >= 1,
          "train: sizes must be positive");
  require(cfg.M_train % (2 * cfg.M_batch) == 0,
          "train: M_train must be divisible by 2*M_batch");
  require(cfg.lambda >= 0.0, "train: lambda must be >= 0");
  if (cfg.method == Method::NaiveFixedY0)
    require(cfg.fixed_y0.has_value(),
            "train: naive-fixed-y0 needs a fixed y0 value");
  if (cfg.method == Method::Robust && cfg.lambda == 0.0 &&
      problem.ell != problem.d)
    std::cerr << "warning: lambda=0 with a non-square feedback map; the "
                 "minimizer may not pin the value process\n";

  const TimeGrid grid(cfg.N, problem.T);
  Increments pool = sample_increments(grid, cfg.M_train, problem.k_noise,
                                      derive_seed(cfg.seed, kSeedPool));
  TrainResult result;
  result.nets = init_stack(cfg.N, problem.d, problem.d,
                           derive_seed(cfg.seed, kSeedInit),
                           cfg.method == Method::Naive);
  AdamState adam = AdamState::fresh(result.nets);
  const int K_batch = cfg.k_batch();

  for (int epoch = 0; epoch < cfg.K_epoch; ++epoch) {
    const double lr = effective_lr(cfg.lr_base, epoch);
    const std::vector<int> perm =
        epoch_permutation(cfg.M_train, cfg.shuffle, cfg.seed, epoch);
    for (int u = 0; u < K_batch; ++u) {
      const auto t0 = std::chrono::steady_clock::now();
      const int base = 2 * u * cfg.M_batch;
      std::span<const int> idxA(perm.data() + base, cfg.M_batch);
      std::span<const int> idxB(perm.data() + base + cfg.M_batch,
                                cfg.M_batch);

      UpdateStats stats;
      GradBlocks grads;
      if (cfg.method == Method::Robust) {
        Increments incA = gather_columns(pool, idxA);
        Increments incB = gather_columns(pool, idxB);
        stats = robust_update_grads(problem, result.nets, grid, incA, incB,
                                    cfg.lambda, cfg.var_y0, cfg.workers,
                                    &grads);
      } else {
        std::vector<int> idxAB(idxA.begin(), idxA.end());
        idxAB.insert(idxAB.end(), idxB.begin(), idxB.end());
        Increments inc = gather_columns(pool, idxAB);
        const double y0 = cfg.method == Method::Naive ? *result.nets.y0
                                                      : *cfg.fixed_y0;
        stats = naive_update_grads(problem, result.nets, grid, inc, y0,
                                   cfg.method == Method::Naive, cfg.workers,
                                   &grads);
      }
      adam_step(result.nets, grads, adam, lr);

      const auto t1 = std::chrono::steady_clock::now();
      HistoryRow row;
      row.epoch = epoch;
      row.batch = u;
      row.loss = stats.loss;
      row.cost_term = stats.cost_term;
      row.var_term = stats.var_term;
      row.lr = lr;
      row.wall_time = std::chrono::duration<double>(t1 - t0).count();
      result.history.rows.push_back(row);
    }
  }
  return result;
}

EstimateResult estimate_y0(const NetworkStack& nets,
                           const ProblemSpec& problem, const TimeGrid& grid,
                           int M_eval, std::uint64_t seed, int workers) {
  require(M_eval >= 2, "estimate_y0: need at least two paths");
  Increments inc = sample_increments(grid, M_eval, problem.k_noise, seed);
  RolloutStore store{false, false, false};
  PathBatch batch = simulate_forward(problem, nets, grid, inc, workers, store);
  EstimateResult r;
  r.y0h = column_mean(batch.ycal0);
  const double ss = centered_square_sum(batch.ycal0, r.y0h);
  r.se = std::sqrt(ss / (static_cast<double>(M_eval) *
                         (static_cast<double>(M_eval) - 1.0)));
  return r;
}

std::vector<LandscapePoint> landscape(const ProblemSpec& problem,
                                      const std::vector<double>& y0_grid,
                                      const TrainConfig& cfg, int M_eval) {
  require(cfg.method == Method::NaiveFixedY0,
          "landscape: method must be naive-fixed-y0");
  const TimeGrid grid(cfg.N, problem.T);
  Increments eval_inc =
      sample_increments(grid, M_eval, problem.k_noise,
                        derive_seed(cfg.seed, kSeedLandEval));
  RolloutStore store{false, false, false};

  std::vector<LandscapePoint> points;
  points.reserve(y0_grid.size());
  for (double y0 : y0_grid) {
    TrainConfig point_cfg = cfg;
    point_cfg.fixed_y0 = y0;
    TrainResult r = train(point_cfg, problem);
    PathBatch batch = simulate_forward(problem, r.nets, grid, eval_inc,
                                       cfg.workers, store);
    LandscapePoint p;
    p.y0 = y0;
    p.mse = naive_loss(batch, y0);
    p.cost = column_mean(batch.ycal0);
    points.push_back(p);
  }
  return points;
}

}  // namespace fbsde
