#include "fbsde/rollout.hpp"

#include <cmath>
#include <memory>

namespace fbsde {

Increments sample_increments(const TimeGrid& grid, int M, int k,
                             std::uint64_t seed) {
  require(M >= 1 && k >= 1, "sample_increments: need M, k >= 1");
  Increments inc;
  inc.M = M;
  inc.k = k;
  inc.h = grid.h;
  inc.steps.assign(grid.N, Mat(k, M));
  std::mt19937_64 rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sqh = std::sqrt(grid.h);
  for (int n = 0; n < grid.N; ++n) {
    Mat& s = inc.steps[n];
    for (int m = 0; m < M; ++m)
      for (int r = 0; r < k; ++r) s(r, m) = sqh * normal(rng);
  }
  return inc;
}

Increments aggregate_increments(const Increments& fine, int factor) {
  require(factor >= 1 && fine.N() % factor == 0,
          "aggregate_increments: factor must divide the fine step count");
  Increments out;
  out.M = fine.M;
  out.k = fine.k;
  out.h = fine.h * factor;
  const int Nc = fine.N() / factor;
  out.steps.reserve(Nc);
  for (int n = 0; n < Nc; ++n) {
    Mat s = fine.steps[n * factor];
    for (int j = 1; j < factor; ++j) s += fine.steps[n * factor + j];
    out.steps.push_back(std::move(s));
  }
  return out;
}

Increments gather_columns(const Increments& pool, std::span<const int> idx) {
  Increments out;
  out.M = static_cast<int>(idx.size());
  out.k = pool.k;
  out.h = pool.h;
  out.steps.assign(pool.N(), Mat(pool.k, out.M));
  for (int n = 0; n < pool.N(); ++n) {
    const Mat& src = pool.steps[n];
    Mat& dst = out.steps[n];
    for (int j = 0; j < out.M; ++j) {
      require(idx[j] >= 0 && idx[j] < pool.M,
              "gather_columns: index out of range");
      dst.col(j) = src.col(idx[j]);
    }
  }
  return out;
}

namespace {

PathBatch alloc_batch(const ProblemSpec& pr, const TimeGrid& grid, int M,
                      const RolloutStore& store) {
  PathBatch b;
  b.grid = grid;
  b.M = M;
  b.d = pr.d;
  b.k = pr.k_noise;
  if (store.x) b.X.assign(grid.N + 1, Mat(pr.d, M));
  if (store.z) b.Z.assign(grid.N, Mat(pr.d, M));
  if (store.rows) {
    b.fstep.assign(grid.N, Mat(1, M));
    b.stoch.assign(grid.N, Mat(1, M));
  }
  b.f_sum.resize(1, M);
  b.stoch_sum.resize(1, M);
  b.gterm.resize(1, M);
  b.ycal0.resize(1, M);
  return b;
}

template <class PolicyFactory>
PathBatch simulate_chunked(const ProblemSpec& pr, const TimeGrid& grid,
                           const Increments& dW, int workers,
                           const RolloutStore& store,
                           PolicyFactory&& make_policy) {
  PathBatch batch = alloc_batch(pr, grid, dW.M, store);
  const int nchunks = (dW.M + kChunkCols - 1) / kChunkCols;

  parallel_for(nchunks, workers, [&](int c) {
    const int col0 = c * kChunkCols;
    const int cols = std::min(kChunkCols, dW.M - col0);
    PlainEngine e;
    auto policy = make_policy(e);
    auto refs =
        detail::roll_chunk(e, pr, grid, dW, col0, cols, policy, store);
    if (store.x)
      for (int n = 0; n <= grid.N; ++n)
        batch.X[n].middleCols(col0, cols) = refs.X[n];
    if (store.z)
      for (int n = 0; n < grid.N; ++n)
        batch.Z[n].middleCols(col0, cols) = refs.Z[n];
    if (store.rows)
      for (int n = 0; n < grid.N; ++n) {
        batch.fstep[n].middleCols(col0, cols) = refs.frow[n];
        batch.stoch[n].middleCols(col0, cols) = refs.srow[n];
      }
    batch.f_sum.middleCols(col0, cols) = refs.fsum;
    batch.stoch_sum.middleCols(col0, cols) = refs.ssum;
    batch.gterm.middleCols(col0, cols) = refs.gterm;
    batch.ycal0.middleCols(col0, cols) = refs.ycal;
  });
  return batch;
}

}  // namespace

PathBatch simulate_forward(const ProblemSpec& problem,
                           const NetworkStack& nets, const TimeGrid& grid,
                           const Increments& dW, int workers,
                           RolloutStore store) {
  require(nets.steps() == grid.N,
          "simulate_forward: stack has " + std::to_string(nets.steps()) +
              " nets for N=" + std::to_string(grid.N));
  if (problem.kind == ProblemKind::Custom) {
    ScalarPolicy policy = [&nets](int n, double, const Vec& x) {
      return mlp_forward(nets.nets[n], x);
    };
    return simulate_scalar(problem, policy, grid, dW, store);
  }
  return simulate_chunked(problem, grid, dW, workers, store,
                          [&](PlainEngine& e) {
                            auto handles = std::make_shared<
                                std::vector<std::array<Mat, 6>>>();
                            handles->reserve(nets.nets.size());
                            for (const MlpParams& p : nets.nets)
                              handles->push_back(lift_net(e, p));
                            return [handles](PlainEngine& eng, int n, double,
                                             const Mat& X) {
                              return mlp_apply(eng, (*handles)[n], X);
                            };
                          });
}

PathBatch simulate_reference(const ProblemSpec& problem,
                             const RiccatiSolution& ric, const TimeGrid& grid,
                             const Increments& dW, int workers,
                             RolloutStore store) {
  require(problem.kind == ProblemKind::Lq,
          "simulate_reference: needs an LQ problem");
  auto P2 = std::make_shared<std::vector<Mat>>();
  auto Qv = std::make_shared<std::vector<Mat>>();
  P2->reserve(grid.N);
  Qv->reserve(grid.N);
  for (int n = 0; n < grid.N; ++n) {
    const int i = ric.nearest_index(grid.t(n));
    P2->push_back(2.0 * ric.P[i]);
    Qv->push_back(ric.Q[i]);
  }
  return simulate_chunked(
      problem, grid, dW, workers, store, [&](PlainEngine&) {
        return [P2, Qv](PlainEngine& eng, int n, double, const Mat& X) {
          return eng.add_col(eng.matmul(eng.constant((*P2)[n]), X),
                             eng.constant((*Qv)[n]));
        };
      });
}

PathBatch simulate_scalar(const ProblemSpec& problem,
                          const ScalarPolicy& policy, const TimeGrid& grid,
                          const Increments& dW, RolloutStore store) {
  require(dW.N() == grid.N && dW.k == problem.k_noise,
          "simulate_scalar: increments do not match grid/problem");
  PathBatch batch = alloc_batch(problem, grid, dW.M, store);
  for (int m = 0; m < dW.M; ++m) {
    Vec x = problem.x0;
    double fsum = 0.0, ssum = 0.0;
    if (store.x) batch.X[0].col(m) = x;
    for (int n = 0; n < grid.N; ++n) {
      const double t = grid.t(n);
      Vec z = policy(n, t, x);
      const double f = problem.f(t, x, z);
      Vec noise = problem.sigma(t, x) * dW.steps[n].col(m);
      const double s = z.dot(noise);
      fsum += f * grid.h;
      ssum += s;
      x = (x + grid.h * problem.b(t, x, z) + noise).eval();
      if (!x.allFinite())
        fail("simulate: non-finite state at step " + std::to_string(n + 1) +
             ", path " + std::to_string(m));
      if (store.z) batch.Z[n].col(m) = z;
      if (store.rows) {
        batch.fstep[n](0, m) = f;
        batch.stoch[n](0, m) = s;
      }
      if (store.x) batch.X[n + 1].col(m) = x;
    }
    const double g = problem.g(x);
    batch.f_sum(0, m) = fsum;
    batch.stoch_sum(0, m) = ssum;
    batch.gterm(0, m) = g;
    batch.ycal0(0, m) = g + fsum - ssum;
  }
  return batch;
}

void reconstruct_y(PathBatch& batch, double y0) {
  require(!batch.fstep.empty() && !batch.stoch.empty(),
          "reconstruct_y: per-step rows were not stored");
  batch.y0 = y0;
  batch.Y.resize(batch.grid.N + 1, batch.M);
  batch.Y.row(0).setConstant(y0);
  for (int n = 0; n < batch.grid.N; ++n)
    batch.Y.row(n + 1) =
        batch.Y.row(n) - batch.grid.h * batch.fstep[n].row(0) +
        batch.stoch[n].row(0);
}

double HatPath::operator()(double t) const {
  require(t >= -1e-12 && t <= grid.T + 1e-12,
          "hat: t outside [0,T]");
  // The nudge keeps node queries t = n*h on the right side of the jump.
  int n = static_cast<int>(std::floor(t / grid.h + 1e-9));
  if (n < 0) n = 0;
  if (n > grid.N) n = grid.N;
  return values[n];
}

HatPath hat_interpolate(std::vector<double> values, const TimeGrid& grid) {
  require(static_cast<int>(values.size()) == grid.N + 1,
          "hat_interpolate: need N+1 values");
  return HatPath{grid, std::move(values)};
}

std::vector<double> check_restrict(const std::function<double(double)>& f,
                                   const TimeGrid& grid) {
  std::vector<double> out(grid.N + 1);
  for (int n = 0; n <= grid.N; ++n) out[n] = f(grid.t(n));
  return out;
}

}  // namespace fbsde
