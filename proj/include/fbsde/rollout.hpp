#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "fbsde/nn.hpp"
#include "fbsde/problems.hpp"
#include "fbsde/riccati.hpp"
#include "fbsde/tape.hpp"

namespace fbsde {

// Paths are processed in fixed-size column chunks; chunk boundaries depend
// only on M, so results are identical for any worker count.
inline constexpr int kChunkCols = 128;

struct TimeGrid {
  int N = 0;
  double T = 0.0;
  double h = 0.0;

  TimeGrid() = default;
  TimeGrid(int N_, double T_) : N(N_), T(T_), h(T_ / N_) {
    require(N_ >= 1 && T_ > 0.0, "TimeGrid: need N >= 1 and T > 0");
  }
  double t(int n) const { return n * h; }
};

/// Wiener increments, one k x M matrix per time step (units sqrt(time)).
struct Increments {
  int M = 0, k = 0;
  double h = 0.0;
  std::vector<Mat> steps;

  int N() const { return static_cast<int>(steps.size()); }
};

Increments sample_increments(const TimeGrid& grid, int M, int k,
                             std::uint64_t seed);

// Sums groups of `factor` consecutive fine steps into one coarse step: the
// same Brownian path seen on a coarser grid.
Increments aggregate_increments(const Increments& fine, int factor);

// Pulls the listed columns (paths) out of a pool, preserving list order.
Increments gather_columns(const Increments& pool, std::span<const int> idx);

struct PathBatch {
  TimeGrid grid;
  int M = 0, d = 0, k = 0;
  std::vector<Mat> X;      // N+1 entries d x M (empty when not stored)
  std::vector<Mat> Z;      // N entries d x M
  std::vector<Mat> fstep;  // N entries 1 x M: f(t_n, X_n, Z_n)
  std::vector<Mat> stoch;  // N entries 1 x M: <Z_n, sigma(t_n,X_n) dW_n>
  Mat f_sum;               // 1 x M: sum_n f(t_n,X_n,Z_n) h
  Mat stoch_sum;           // 1 x M
  Mat gterm;               // 1 x M: g(X_N)
  Mat ycal0;               // 1 x M: g(X_N) + f_sum - stoch_sum
  Mat Y;                   // (N+1) x M, filled by reconstruct_y
  double y0 = std::numeric_limits<double>::quiet_NaN();

  double mean_ycal0() const { return ycal0.mean(); }
};

struct RolloutStore {
  bool x = true;
  bool z = true;
  bool rows = true;  // fstep/stoch (needed by reconstruct_y)
};

PathBatch simulate_forward(const ProblemSpec& problem,
                           const NetworkStack& nets, const TimeGrid& grid,
                           const Increments& dW, int workers = 1,
                           RolloutStore store = {});

// X driven by the semi-analytic feedback z = 2P(t)x + Q(t).
PathBatch simulate_reference(const ProblemSpec& problem,
                             const RiccatiSolution& ric, const TimeGrid& grid,
                             const Increments& dW, int workers = 1,
                             RolloutStore store = {});

// Path-at-a-time reference implementation driven by the scalar evaluators;
// handles Custom problems and cross-checks the vectorized engines.
using ScalarPolicy = std::function<Vec(int n, double t, const Vec& x)>;
PathBatch simulate_scalar(const ProblemSpec& problem,
                          const ScalarPolicy& policy, const TimeGrid& grid,
                          const Increments& dW, RolloutStore store = {});

// Y_0 = y0 on every path, then Y_{n+1} = Y_n - f(t_n,X_n,Z_n) h + stoch_n.
void reconstruct_y(PathBatch& batch, double y0);

/// Right-continuous piecewise-constant interpolation of grid values, with
/// hat(T) = last value.
struct HatPath {
  TimeGrid grid;
  std::vector<double> values;  // N+1
  double operator()(double t) const;
};

HatPath hat_interpolate(std::vector<double> values, const TimeGrid& grid);
std::vector<double> check_restrict(const std::function<double(double)>& f,
                                   const TimeGrid& grid);

namespace detail {

// Per-chunk engine refs harvested by the callers. For the tape engine these
// are handles into the tape; for the plain engine they hold the data itself.
template <class E>
struct ChunkRefs {
  std::vector<typename E::V> X, Z, frow, srow;
  typename E::V fsum, ssum, gterm, ycal;
};

template <class E, class Policy>
ChunkRefs<E> roll_chunk(E& e, const ProblemSpec& pr, const TimeGrid& grid,
                        const Increments& inc, int col0, int cols,
                        Policy&& policy, const RolloutStore& store) {
  require(pr.kind != ProblemKind::Custom,
          "roll_chunk: custom problems use simulate_scalar");
  require(inc.N() == grid.N && inc.k == pr.k_noise,
          "roll_chunk: increments do not match grid/problem");
  using V = typename E::V;
  const DerivedCoeffs& co = pr.co;

  V cA = e.constant(co.A);
  V cS = e.constant(co.S);
  V cRx = e.constant(co.Rx);
  V cG = e.constant(co.G);
  V cSigma = e.constant(co.Sigma);
  V cAC = e.constant(co.AC);
  V cPiC;
  if (pr.kind == ProblemKind::Nonlinear)
    cPiC = e.constant(Mat(M_PI * co.C.asDiagonal()));

  ChunkRefs<E> out;
  V X = e.constant(pr.x0.replicate(1, cols));
  if (store.x) out.X.push_back(X);
  V fsum = e.constant(Mat::Zero(1, cols));
  V ssum = e.constant(Mat::Zero(1, cols));

  for (int n = 0; n < grid.N; ++n) {
    const double t = grid.t(n);
    V Z = policy(e, n, t, X);
    V SZ = e.matmul(cS, Z);

    V b;
    if (pr.kind == ProblemKind::Lq) {
      b = e.add_col(e.sub(e.scale(SZ, -0.5), e.matmul(cA, X)), cAC);
    } else {
      V s = e.sin(e.matmul(cPiC, X));
      b = e.add(e.matmul(cA, s), e.scale(SZ, -0.5));
    }

    V dWc = e.constant(inc.steps[n].middleCols(col0, cols));
    V noise;
    if (pr.kind == ProblemKind::Lq) {
      noise = e.matmul(cSigma, dWc);
    } else {
      V u = e.colwise_dot(X, dWc);
      noise = e.matmul(cSigma, e.add(dWc, e.scale_cols(X, u)));
    }

    V f = e.add(e.colwise_dot(X, e.matmul(cRx, X)),
                e.scale(e.colwise_dot(Z, SZ), 0.25));
    V srow = e.colwise_dot(Z, noise);
    fsum = e.add(fsum, e.scale(f, grid.h));
    ssum = e.add(ssum, srow);
    X = e.add(e.add(X, e.scale(b, grid.h)), noise);

    if (!e.val(X).allFinite()) {
      int bad = 0;
      for (int j = 0; j < cols; ++j)
        if (!e.val(X).col(j).allFinite()) {
          bad = j;
          break;
        }
      fail("simulate: non-finite state at step " + std::to_string(n + 1) +
           ", path " + std::to_string(col0 + bad));
    }

    if (store.z) out.Z.push_back(Z);
    if (store.rows) {
      out.frow.push_back(f);
      out.srow.push_back(srow);
    }
    if (store.x) out.X.push_back(X);
  }

  out.gterm = e.colwise_dot(X, e.matmul(cG, X));
  out.fsum = fsum;
  out.ssum = ssum;
  out.ycal = e.sub(e.add(out.gterm, fsum), ssum);
  return out;
}

template <class E>
struct MlpPolicy {
  const std::vector<std::array<typename E::V, 6>>* handles;
  typename E::V operator()(E& e, int n, double, const typename E::V& X) const {
    return mlp_apply(e, (*handles)[n], X);
  }
};

}  // namespace detail

}  // namespace fbsde
