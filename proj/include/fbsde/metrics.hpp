#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fbsde/riccati.hpp"
#include "fbsde/rollout.hpp"

namespace fbsde {

// Discrete process norms over a path batch; one q x M block per time node.
// s_norm: max over time of the per-time RMS; h_norm: average over time of
// the per-time RMS (exactly the printed forms).
double s_norm(std::span<const Mat> values);
double h_norm(std::span<const Mat> values);

// RMS of Y_N - g(X_N); Y must be reconstructed.
double terminal_gap(const PathBatch& batch);

// EOC(h_i) = (log err_{i+1} - log err_i) / (log h_{i+1} - log h_i).
std::vector<double> eoc(const std::vector<double>& errors,
                        const std::vector<double>& hs);

struct BandRow {
  double lo = 0.0, mean = 0.0, hi = 0.0;
};

// Nearest-rank percentiles and mean per time node; input is one scalar
// component per time as a 1 x M row.
std::vector<BandRow> percentile_band(std::span<const Mat> values,
                                     double lo = 5.0, double hi = 95.0);

enum class ZConvention { DxV, SigmaT };

struct ErrorRecord {
  int N = 0;
  double err_x_s = 0.0;     // S-norm of X - X_ref
  double err_y_s = 0.0;     // S-norm of Y - V(t, X)
  double err_z_h = 0.0;     // H-norm of Z - (2P(t)X + Q(t))
  double terminal = 0.0;    // RMS terminal gap
  double err_y0 = 0.0;      // |Y_0 - mean ycal0|
  double y0h = 0.0;
  double y0_ref = 0.0;
  int M = 0;
  std::uint64_t seed = 0;
};

// Reference (Y,Z) are evaluated along the approximate X paths; ref_x is the
// reference-feedback rollout on the same increments, restricted to the
// coarse grid (N+1 blocks of d x M).
ErrorRecord error_vs_reference(const PathBatch& approx,
                               const RiccatiSolution& ric,
                               const std::vector<Mat>& ref_x, double y0_ref,
                               ZConvention zc = ZConvention::DxV,
                               const Mat* sigma_const = nullptr);

}  // namespace fbsde
