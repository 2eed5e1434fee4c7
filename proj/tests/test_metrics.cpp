#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fbsde/metrics.hpp"
#include "fbsde/training.hpp"
#include "helpers.hpp"

using fbsde::Mat;
using fbsde::TimeGrid;
using fbsde::Vec;

namespace {

Mat row_of(std::initializer_list<double> vals) {
  Mat m(1, static_cast<Eigen::Index>(vals.size()));
  int j = 0;
  for (double v : vals) m(0, j++) = v;
  return m;
}

}  // namespace

TEST_CASE("process norms on hand values") {
  std::vector<Mat> one = {row_of({3.0})};
  CHECK(fbsde::s_norm(one) == 3.0);
  CHECK(fbsde::h_norm(one) == 3.0);

  std::vector<Mat> two = {row_of({0.0, 2.0})};
  CHECK(fbsde::s_norm(two) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

  // constant block sequence: both norms give the constant's size
  std::vector<Mat> cst = {row_of({1.5, 1.5}), row_of({1.5, 1.5})};
  CHECK(fbsde::s_norm(cst) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(fbsde::h_norm(cst) == doctest::Approx(1.5).epsilon(1e-15));

  // one live block and one dead block: max keeps c, average halves it
  std::vector<Mat> half = {row_of({2.0, 2.0}), row_of({0.0, 0.0})};
  CHECK(fbsde::s_norm(half) == 2.0);
  CHECK(fbsde::h_norm(half) == 1.0);

  std::vector<Mat> empty;
  CHECK_THROWS_AS((void)fbsde::s_norm(empty), std::invalid_argument);
}

TEST_CASE("norms agree with a brute-force loop") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> nd;
  std::vector<Mat> blocks;
  for (int n = 0; n < 4; ++n) {
    Mat b(3, 7);
    for (int j = 0; j < 7; ++j)
      for (int i = 0; i < 3; ++i) b(i, j) = nd(rng);
    blocks.push_back(b);
  }
  double worst = 0.0, acc = 0.0;
  for (const Mat& b : blocks) {
    double mean_sq = 0.0;
    for (int j = 0; j < 7; ++j) {
      double s = 0.0;
      for (int i = 0; i < 3; ++i) s += b(i, j) * b(i, j);
      mean_sq += s;
    }
    const double rms = std::sqrt(mean_sq / 7.0);
    worst = std::max(worst, rms);
    acc += rms;
  }
  CHECK(fbsde::s_norm(blocks) == doctest::Approx(worst).epsilon(1e-12));
  CHECK(fbsde::h_norm(blocks) == doctest::Approx(acc / 4).epsilon(1e-12));
  CHECK(fbsde::h_norm(blocks) <= fbsde::s_norm(blocks));
}

TEST_CASE("terminal gap ties to the naive loss and the batch spread") {
  auto prob = fbsde::preset("lq2d");
  TimeGrid grid(12, prob.T);
  auto inc = fbsde::sample_increments(grid, 200, 2, 19);
  auto batch = fbsde::simulate_forward(prob, testutil::random_stack(12, 2, 20),
                                       grid, inc);

  const double mean = batch.mean_ycal0();
  fbsde::reconstruct_y(batch, mean);
  const double tg = fbsde::terminal_gap(batch);
  const double sd =
      std::sqrt((batch.ycal0.array() - mean).square().mean());
  CHECK(tg == doctest::Approx(sd).epsilon(1e-9));

  for (double y0 : {mean, mean + 0.4, 0.0}) {
    fbsde::reconstruct_y(batch, y0);
    const double gap = fbsde::terminal_gap(batch);
    CHECK(gap * gap ==
          doctest::Approx(fbsde::naive_loss(batch, y0)).epsilon(1e-9));
  }

  fbsde::PathBatch bare;
  bare.grid = grid;
  CHECK_THROWS_AS((void)fbsde::terminal_gap(bare), std::invalid_argument);
}

TEST_CASE("empirical orders of convergence") {
  auto e1 = fbsde::eoc({0.4, 0.2, 0.1}, {0.1, 0.05, 0.025});
  REQUIRE(e1.size() == 2);
  CHECK(e1[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e1[1] == doctest::Approx(1.0).epsilon(1e-12));

  auto e2 = fbsde::eoc({0.3, 0.3, 0.3}, {0.1, 0.05, 0.025});
  CHECK(e2[0] == doctest::Approx(0.0).epsilon(1e-12));

  // exact power law err = 2 h^alpha
  const double alpha = 1.37;
  std::vector<double> hs = {0.2, 0.1, 0.05, 0.025}, errs;
  for (double h : hs) errs.push_back(2.0 * std::pow(h, alpha));
  for (double o : fbsde::eoc(errs, hs))
    CHECK(o == doctest::Approx(alpha).epsilon(1e-12));

  // published-table anchor: N in {5,...,80} halving on T = 0.5
  std::vector<double> terr = {7.10e-1, 3.26e-1, 1.47e-1, 7.01e-2, 3.47e-2};
  std::vector<double> th = {0.1, 0.05, 0.025, 0.0125, 0.00625};
  auto te = fbsde::eoc(terr, th);
  const double expect[] = {1.12, 1.15, 1.07, 1.01};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(te[i] - expect[i]) < 0.005);

  CHECK_THROWS_AS((void)fbsde::eoc({0.1}, {0.1}), std::invalid_argument);
  CHECK_THROWS_AS((void)fbsde::eoc({0.1, 0.0}, {0.1, 0.05}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)fbsde::eoc({0.1, 0.05}, {0.1}),
                  std::invalid_argument);
}

TEST_CASE("percentile bands use nearest-rank statistics") {
  Mat ramp(1, 100);
  for (int j = 0; j < 100; ++j) ramp(0, j) = j + 1;
  std::vector<Mat> rows = {ramp};
  auto band = fbsde::percentile_band(rows);
  REQUIRE(band.size() == 1);
  CHECK(band[0].lo == 5.0);
  CHECK(band[0].hi == 95.0);
  CHECK(band[0].mean == doctest::Approx(50.5).epsilon(1e-15));

  // order of the paths cannot matter
  Mat shuffled = ramp;
  std::mt19937_64 rng(4);
  for (int j = 99; j > 0; --j) {
    std::uniform_int_distribution<int> pick(0, j);
    std::swap(shuffled(0, j), shuffled(0, pick(rng)));
  }
  std::vector<Mat> rows2 = {shuffled};
  auto band2 = fbsde::percentile_band(rows2);
  CHECK(band2[0].lo == band[0].lo);
  CHECK(band2[0].hi == band[0].hi);
  CHECK(band2[0].mean == doctest::Approx(band[0].mean).epsilon(1e-12));

  // constant rows collapse the band
  std::vector<Mat> flat = {Mat::Constant(1, 25, 0.7)};
  auto fb = fbsde::percentile_band(flat);
  CHECK(fb[0].lo == 0.7);
  CHECK(fb[0].mean == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(fb[0].hi == 0.7);

  // standard normal sample hits the textbook quantiles
  Mat gauss(1, 100000);
  std::normal_distribution<double> nd;
  std::mt19937_64 rng2(8);
  for (int j = 0; j < gauss.cols(); ++j) gauss(0, j) = nd(rng2);
  std::vector<Mat> grows = {gauss};
  auto gb = fbsde::percentile_band(grows);
  CHECK(std::abs(gb[0].hi - 1.6449) < 0.02);
  CHECK(std::abs(gb[0].lo + 1.6449) < 0.02);
  CHECK(std::abs(gb[0].mean) < 0.02);

  std::vector<Mat> tiny = {Mat::Zero(1, 5)};
  CHECK_THROWS_AS((void)fbsde::percentile_band(tiny), std::invalid_argument);
  std::vector<Mat> tall = {Mat::Zero(2, 30)};
  CHECK_THROWS_AS((void)fbsde::percentile_band(tall), std::invalid_argument);
}

TEST_CASE("error record is exactly zero for the zero problem") {
  fbsde::LqSpec s;
  s.A = Mat::Identity(2, 2);
  s.B = Mat::Identity(2, 2);
  s.C = Vec::Zero(2);
  s.Sigma = 0.2 * Mat::Identity(2, 2);
  s.Rx = Mat::Zero(2, 2);
  s.Ru = Mat::Identity(2, 2);
  s.G = Mat::Zero(2, 2);
  s.x0 = Vec::Constant(2, 0.3);
  s.T = 0.5;
  auto prob = fbsde::lq_problem(s);
  auto ric = fbsde::solve_riccati(s, 400);

  TimeGrid grid(8, prob.T);
  auto inc = fbsde::sample_increments(grid, 64, 2, 3);
  fbsde::NetworkStack nets;
  nets.nets.assign(8, fbsde::MlpParams::zeros(2, 2));
  auto batch = fbsde::simulate_forward(prob, nets, grid, inc);
  fbsde::reconstruct_y(batch, 0.0);

  auto rec = fbsde::error_vs_reference(batch, ric, batch.X, 0.0);
  CHECK(rec.err_x_s == 0.0);
  CHECK(rec.err_y_s <= 1e-14);
  CHECK(rec.err_z_h <= 1e-14);
  CHECK(rec.terminal <= 1e-14);
  CHECK(rec.err_y0 <= 1e-14);
  CHECK(rec.N == 8);
  CHECK(rec.M == 64);
}

TEST_CASE("reference-map rollouts leave pure discretization error") {
  auto prob = fbsde::preset("lq2d");
  auto ric = fbsde::solve_riccati(*prob.lq, 80 * 256);
  const double v0 = ric.value(0.0, prob.x0);
  const int Nref = 160, M = 512;

  TimeGrid fine_grid(Nref, prob.T);
  auto fine = fbsde::sample_increments(fine_grid, M, 2, 99);
  auto ref_batch = fbsde::simulate_reference(
      prob, ric, fine_grid, fine, 1, fbsde::RolloutStore{true, false, false});

  double prev_x = 1e100, prev_y = 1e100, prev_t = 1e100;
  for (int N : {10, 20, 40}) {
    const int factor = Nref / N;
    auto coarse = fbsde::aggregate_increments(fine, factor);
    TimeGrid grid(N, prob.T);
    auto batch = fbsde::simulate_reference(prob, ric, grid, coarse);
    fbsde::reconstruct_y(batch, v0);
    std::vector<Mat> ref_x(N + 1);
    for (int n = 0; n <= N; ++n) ref_x[n] = ref_batch.X[n * factor];
    auto rec = fbsde::error_vs_reference(batch, ric, ref_x, v0);
    CHECK(rec.err_x_s < prev_x);
    CHECK(rec.err_y_s < prev_y);
    CHECK(rec.terminal < prev_t);
    prev_x = rec.err_x_s;
    prev_y = rec.err_y_s;
    prev_t = rec.terminal;
  }
  CHECK(prev_x < 0.05);
}

TEST_CASE("the sigma^T convention reshapes the Z error") {
  auto prob = fbsde::preset("lq2d");
  auto ric = fbsde::solve_riccati(*prob.lq, 2000);
  TimeGrid grid(6, prob.T);
  auto inc = fbsde::sample_increments(grid, 32, 2, 7);
  auto batch = fbsde::simulate_forward(prob, testutil::random_stack(6, 2, 8),
                                       grid, inc);
  fbsde::reconstruct_y(batch, batch.mean_ycal0());

  auto dxv = fbsde::error_vs_reference(batch, ric, batch.X, 0.6,
                                       fbsde::ZConvention::DxV);
  const Mat sig = prob.lq->Sigma;
  auto st = fbsde::error_vs_reference(batch, ric, batch.X, 0.6,
                                      fbsde::ZConvention::SigmaT, &sig);
  CHECK(dxv.err_z_h > 0.0);
  CHECK(st.err_z_h > 0.0);
  CHECK(dxv.err_z_h != st.err_z_h);
  // everything except the Z column is unchanged
  CHECK(dxv.err_x_s == st.err_x_s);
  CHECK(dxv.err_y_s == st.err_y_s);

  CHECK_THROWS_AS((void)fbsde::error_vs_reference(
                      batch, ric, batch.X, 0.6, fbsde::ZConvention::SigmaT,
                      nullptr),
                  std::invalid_argument);

  fbsde::PathBatch lean = batch;
  lean.X.clear();
  CHECK_THROWS_AS((void)fbsde::error_vs_reference(lean, ric, batch.X, 0.6),
                  std::invalid_argument);
}
