#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fbsde/common.hpp"
#include "fbsde/problems.hpp"

namespace fbsde {

/// Value-function ansatz V(t,x) = x^T P(t) x + x^T Q(t) + R(t) on a fine
/// equidistant grid; node i sits at t_i = i*T/steps.
struct RiccatiSolution {
  double T = 0.0;
  int steps = 0;
  std::vector<Mat> P;     // steps+1 symmetric d x d
  std::vector<Vec> Q;     // steps+1
  std::vector<double> R;  // steps+1

  double h() const { return T / steps; }
  int nearest_index(double t) const;
  double value(double t, const Vec& x) const;
  Vec gradient(double t, const Vec& x) const;  // 2 P(t) x + Q(t)
};

// Backward Euler from t=T (P=G, Q=0, R=0) down to t=0, P symmetrized every
// step. The right-hand sides come from the HJB ansatz; docs/riccati.md walks
// through the derivation.
RiccatiSolution solve_riccati(const LqSpec& spec, int steps_fine);

std::pair<double, Vec> value_and_gradient(const RiccatiSolution& ric,
                                          double t, const Vec& x);

// Reference processes along one discrete path: Y_n = V(t_n, X_n),
// Z_n = 2 P(t_n) X_n + Q(t_n).
void reference_yz(const RiccatiSolution& ric,
                  const std::vector<Vec>& x_path,
                  const std::vector<double>& times, std::vector<double>* y,
                  std::vector<Vec>* z);

// Simulates X with the reference feedback and returns the RMS over paths of
// Y_0 + sum <sigma^T Z, dW> - sum f h - g(X_N). Shrinks with h when the
// driver signs and the (P,Q,R) system are consistent.
double bsde_residual_oracle(const LqSpec& spec, const RiccatiSolution& ric,
                            double h, int M, std::uint64_t seed);

}  // namespace fbsde
