#include "fbsde/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace fbsde {

namespace {

double rms_block(const Mat& block) {
  return std::sqrt(block.colwise().squaredNorm().mean());
}

}  // namespace

double s_norm(std::span<const Mat> values) {
  require(!values.empty(), "s_norm: empty batch");
  double worst = 0.0;
  for (const Mat& v : values) worst = std::max(worst, rms_block(v));
  return worst;
}

double h_norm(std::span<const Mat> values) {
  require(!values.empty(), "h_norm: empty batch");
  double acc = 0.0;
  for (const Mat& v : values) acc += rms_block(v);
  return acc / static_cast<double>(values.size());
}

double terminal_gap(const PathBatch& batch) {
  require(batch.Y.rows() == batch.grid.N + 1,
          "terminal_gap: Y was not reconstructed");
  const Mat gap = batch.Y.row(batch.grid.N) - batch.gterm.row(0);
  return rms_block(gap);
}

std::vector<double> eoc(const std::vector<double>& errors,
                        const std::vector<double>& hs) {
  require(errors.size() == hs.size() && errors.size() >= 2,
          "eoc: need matching lists of length >= 2");
  for (double e : errors)
    require(e > 0.0, "eoc: errors must be positive");
  for (double h : hs) require(h > 0.0, "eoc: steps must be positive");
  std::vector<double> out(errors.size() - 1);
  for (std::size_t i = 0; i + 1 < errors.size(); ++i)
    out[i] = (std::log(errors[i + 1]) - std::log(errors[i])) /
             (std::log(hs[i + 1]) - std::log(hs[i]));
  return out;
}

namespace {

double nearest_rank(std::vector<double>& sorted_scratch, double pct) {
  const auto M = sorted_scratch.size();
  auto r = static_cast<std::size_t>(
      std::ceil(pct / 100.0 * static_cast<double>(M)));
  if (r < 1) r = 1;
  if (r > M) r = M;
  return sorted_scratch[r - 1];
}

}  // namespace

std::vector<BandRow> percentile_band(std::span<const Mat> values, double lo,
                                     double hi) {
  require(!values.empty(), "percentile_band: empty input");
  require(values[0].cols() >= 20, "percentile_band: need at least 20 paths");
  std::vector<BandRow> out;
  out.reserve(values.size());
  std::vector<double> scratch;
  for (const Mat& row : values) {
    require(row.rows() == 1, "percentile_band: expected 1 x M rows");
    scratch.assign(row.data(), row.data() + row.cols());
    std::sort(scratch.begin(), scratch.end());
    BandRow b;
    b.lo = nearest_rank(scratch, lo);
    b.hi = nearest_rank(scratch, hi);
    b.mean = row.mean();
    out.push_back(b);
  }
  return out;
}

ErrorRecord error_vs_reference(const PathBatch& approx,
                               const RiccatiSolution& ric,
                               const std::vector<Mat>& ref_x, double y0_ref,
                               ZConvention zc, const Mat* sigma_const) {
  const int N = approx.grid.N;
  require(static_cast<int>(approx.X.size()) == N + 1 &&
              static_cast<int>(approx.Z.size()) == N,
          "error_vs_reference: X/Z were not stored");
  require(approx.Y.rows() == N + 1,
          "error_vs_reference: Y was not reconstructed");
  require(static_cast<int>(ref_x.size()) == N + 1,
          "error_vs_reference: reference X path missing");
  require(zc == ZConvention::DxV || sigma_const != nullptr,
          "error_vs_reference: sigma needed for the sigma^T convention");

  ErrorRecord rec;
  rec.N = N;
  rec.M = approx.M;
  rec.y0_ref = y0_ref;
  rec.y0h = approx.mean_ycal0();
  rec.err_y0 = std::abs(y0_ref - rec.y0h);
  rec.terminal = terminal_gap(approx);

  double worst_x = 0.0, worst_y = 0.0, acc_z = 0.0;
  for (int n = 0; n <= N; ++n) {
    const int i = ric.nearest_index(approx.grid.t(n));
    const Mat& X = approx.X[n];

    worst_x = std::max(worst_x, rms_block(X - ref_x[n]));

    Mat PX = ric.P[i] * X;
    Mat yref = X.cwiseProduct(PX).colwise().sum() +
               ric.Q[i].transpose() * X;
    yref.array() += ric.R[i];
    worst_y = std::max(worst_y, rms_block(approx.Y.row(n) - yref.row(0)));

    if (n < N) {
      Mat zref = 2.0 * PX;
      zref.colwise() += ric.Q[i];
      Mat zdiff = approx.Z[n] - zref;
      if (zc == ZConvention::SigmaT) zdiff = sigma_const->transpose() * zdiff;
      acc_z += rms_block(zdiff);
    }
  }
  rec.err_x_s = worst_x;
  rec.err_y_s = worst_y;
  rec.err_z_h = acc_z / N;
  return rec;
}

}  // namespace fbsde
