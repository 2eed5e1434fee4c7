#include "fbsde/riccati.hpp"

#include <cmath>

namespace fbsde {

int RiccatiSolution::nearest_index(double t) const {
  require(t >= -1e-9 && t <= T + 1e-9,
          "riccati lookup: t=" + std::to_string(t) + " outside [0," +
              std::to_string(T) + "]");
  int i = static_cast<int>(std::lround(t / h()));
  if (i < 0) i = 0;
  if (i > steps) i = steps;
  return i;
}

double RiccatiSolution::value(double t, const Vec& x) const {
  const int i = nearest_index(t);
  return x.dot(P[i] * x) + x.dot(Q[i]) + R[i];
}

Vec RiccatiSolution::gradient(double t, const Vec& x) const {
  const int i = nearest_index(t);
  return 2.0 * P[i] * x + Q[i];
}

std::pair<double, Vec> value_and_gradient(const RiccatiSolution& ric,
                                          double t, const Vec& x) {
  return {ric.value(t, x), ric.gradient(t, x)};
}

RiccatiSolution solve_riccati(const LqSpec& spec, int steps_fine) {
  require(steps_fine >= 100, "solve_riccati: steps_fine must be >= 100");
  const auto d = spec.A.rows();
  Eigen::LLT<Mat> llt(spec.Ru);
  require(llt.info() == Eigen::Success,
          "solve_riccati: R_u must be positive definite");
  const Mat S = spec.B * llt.solve(spec.B.transpose());
  const Mat At = spec.A.transpose();
  const Vec AC = spec.A * spec.C;
  const Mat SS = spec.Sigma * spec.Sigma.transpose();
  const double h = spec.T / steps_fine;

  RiccatiSolution ric;
  ric.T = spec.T;
  ric.steps = steps_fine;
  ric.P.assign(steps_fine + 1, Mat());
  ric.Q.assign(steps_fine + 1, Vec());
  ric.R.assign(steps_fine + 1, 0.0);

  ric.P[steps_fine] = spec.G;
  ric.Q[steps_fine] = Vec::Zero(d);
  ric.R[steps_fine] = 0.0;

  for (int i = steps_fine; i > 0; --i) {
    const Mat& P = ric.P[i];
    const Vec& Q = ric.Q[i];
    const double R = ric.R[i];

    Mat dP = At * P + P * spec.A + P * S * P - spec.Rx;
    Vec dQ = -2.0 * (P * AC) + At * Q + P * (S * Q);
    double dR = -(SS * P).trace() - AC.dot(Q) + 0.25 * Q.dot(S * Q);

    Mat Pn = P - h * dP;
    Pn = 0.5 * (Pn + Pn.transpose()).eval();
    ric.P[i - 1] = std::move(Pn);
    ric.Q[i - 1] = Q - h * dQ;
    ric.R[i - 1] = R - h * dR;

    if (!ric.P[i - 1].allFinite() || !ric.Q[i - 1].allFinite() ||
        !std::isfinite(ric.R[i - 1]))
      fail("solve_riccati: blow-up at t=" +
           std::to_string((i - 1) * h));
  }
  return ric;
}

void reference_yz(const RiccatiSolution& ric, const std::vector<Vec>& x_path,
                  const std::vector<double>& times, std::vector<double>* y,
                  std::vector<Vec>* z) {
  require(x_path.size() == times.size(),
          "reference_yz: path/time length mismatch");
  if (y) y->resize(x_path.size());
  if (z) z->resize(x_path.size());
  for (std::size_t n = 0; n < x_path.size(); ++n) {
    if (y) (*y)[n] = ric.value(times[n], x_path[n]);
    if (z) (*z)[n] = ric.gradient(times[n], x_path[n]);
  }
}

double bsde_residual_oracle(const LqSpec& spec, const RiccatiSolution& ric,
                            double h, int M, std::uint64_t seed) {
  const double steps_real = spec.T / h;
  const int N = static_cast<int>(std::lround(steps_real));
  require(std::abs(steps_real - N) < 1e-9 && N >= 1,
          "bsde_residual_oracle: h must divide T");

  Eigen::LLT<Mat> llt(spec.Ru);
  require(llt.info() == Eigen::Success,
          "bsde_residual_oracle: R_u must be positive definite");
  const Mat S = spec.B * llt.solve(spec.B.transpose());
  const Vec AC = spec.A * spec.C;
  const auto k = spec.Sigma.cols();
  const double y0 = ric.value(0.0, spec.x0);
  const double sqh = std::sqrt(h);

  std::mt19937_64 rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  constexpr int kChunk = 1024;
  double total = 0.0;
  for (int done = 0; done < M; done += kChunk) {
    const int c = std::min(kChunk, M - done);
    Mat X = spec.x0.replicate(1, c);
    Mat fsum = Mat::Zero(1, c), ssum = Mat::Zero(1, c);
    Mat dW(k, c);
    for (int n = 0; n < N; ++n) {
      const int i = ric.nearest_index(n * h);
      Mat Z = 2.0 * (ric.P[i] * X);
      Z.colwise() += ric.Q[i];
      Mat f = X.cwiseProduct(spec.Rx * X).colwise().sum() +
              0.25 * Z.cwiseProduct(S * Z).colwise().sum();
      Mat drift = -(spec.A * X) - 0.5 * (S * Z);
      drift.colwise() += AC;
      for (int j = 0; j < c; ++j)
        for (int r = 0; r < k; ++r) dW(r, j) = sqh * normal(rng);
      Mat noise = spec.Sigma * dW;
      ssum += Z.cwiseProduct(noise).colwise().sum();
      fsum += h * f;
      X += h * drift + noise;
    }
    Mat g = X.cwiseProduct(spec.G * X).colwise().sum();
    Mat resid = (y0 + ssum.array() - fsum.array() - g.array()).matrix();
    total += resid.cwiseProduct(resid).sum();
  }
  return std::sqrt(total / M);
}

}  // namespace fbsde
