#pragma once

#include <functional>

#include "fbsde/nn.hpp"
#include "fbsde/problems.hpp"
#include "fbsde/rollout.hpp"
#include "fbsde/tape.hpp"

namespace testutil {

using fbsde::Mat;
using fbsde::Vec;

inline fbsde::ProblemSpec custom_problem(
    int d, int k,
    std::function<Vec(double, const Vec&, const Vec&)> b,
    std::function<Mat(double, const Vec&)> sigma,
    std::function<double(double, const Vec&, const Vec&)> f,
    std::function<double(const Vec&)> g, const Vec& x0, double T) {
  fbsde::ProblemSpec p;
  p.kind = fbsde::ProblemKind::Custom;
  p.name = "custom";
  p.d = d;
  p.k_noise = k;
  p.ell = d;
  p.T = T;
  p.x0 = x0;
  p.b = std::move(b);
  p.sigma = std::move(sigma);
  p.f = std::move(f);
  p.g = std::move(g);
  p.vstar = [](double, const Vec&, const Vec& z) { return z; };
  return p;
}

inline fbsde::ProblemSpec zero_problem(int d, int k, double T,
                                       double sigma_scale = 1.0) {
  Mat S = sigma_scale * Mat::Identity(d, k);
  return custom_problem(
      d, k, [d](double, const Vec&, const Vec&) { return Vec::Zero(d); },
      [S](double, const Vec&) { return S; },
      [](double, const Vec&, const Vec&) { return 0.0; },
      [](const Vec&) { return 0.0; }, Vec::Zero(d), T);
}

inline fbsde::NetworkStack random_stack(int N, int d, std::uint64_t seed,
                                        bool with_y0 = false) {
  return fbsde::init_stack(N, d, d, seed, with_y0);
}

// Central-difference check for a scalar function of one matrix leaf.
inline double fd_check_matrix(
    const std::function<fbsde::ad::VarRef(fbsde::ad::Tape&,
                                          fbsde::ad::VarRef)>& build,
    const Mat& x0, double eps) {
  fbsde::ad::Tape tape;
  auto xr = tape.leaf(x0);
  auto root = build(tape, xr);
  auto adj = tape.backward(root);
  const Mat& gx = adj[xr.idx];

  auto eval = [&](const Mat& p) {
    fbsde::ad::Tape t;
    auto r = build(t, t.leaf(p, false));
    return t.value(r)(0, 0);
  };

  double worst = 0.0;
  for (Eigen::Index j = 0; j < x0.cols(); ++j)
    for (Eigen::Index i = 0; i < x0.rows(); ++i) {
      Mat xp = x0, xm = x0;
      xp(i, j) += eps;
      xm(i, j) -= eps;
      const double cd = (eval(xp) - eval(xm)) / (2.0 * eps);
      const double a = gx.size() ? gx(i, j) : 0.0;
      worst = std::max(worst, std::abs(a - cd) / (std::abs(cd) + 1e-12));
    }
  return worst;
}

}  // namespace testutil
