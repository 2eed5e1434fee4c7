#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fbsde/common.hpp"

namespace fbsde {

enum class ProblemKind { Lq, Nonlinear, Custom };

/// Matrices of a linear-quadratic instance: drift A(C-x)+Bu, diffusion Σ,
/// running cost <R_x x,x>+<R_u u,u>, terminal cost <Gx,x>.
struct LqSpec {
  Mat A, B, Sigma, Rx, Ru, G;
  Vec C, x0;
  double T = 0.0;
};

/// Same data with drift A sin(pi C∘x)+Bu and diffusion Σ(I + xx^T).
struct NonlinearSpec {
  Mat A, B, Sigma, Rx, Ru, G;
  Vec C, x0;
  double T = 0.0;
};

// Constant matrices shared by the scalar evaluators and the vectorized
// rollout paths. S = B R_u^{-1} B^T.
struct DerivedCoeffs {
  Mat A, Sigma, Rx, G, S, RuInvBt;
  Vec AC, C;
};

struct ProblemSpec {
  ProblemKind kind = ProblemKind::Custom;
  std::string name = "custom";
  int d = 0, k_noise = 0, ell = 0;
  double T = 0.0;
  Vec x0;
  double lambda_default = 0.0;
  // Reference initial value when one exists: V(0,x0) for LQ (filled by the
  // caller from the Riccati solve), a fine-grid constant for presets that
  // ship one.
  std::optional<double> reference_y0;

  std::function<Vec(double, const Vec&, const Vec&)> b;      // drift(t,x,z)
  std::function<Mat(double, const Vec&)> sigma;              // d x k
  std::function<double(double, const Vec&, const Vec&)> f;   // running cost
  std::function<double(const Vec&)> g;                       // terminal cost
  std::function<Vec(double, const Vec&, const Vec&)> vstar;  // feedback

  std::optional<LqSpec> lq;  // kept for the Riccati reference (LQ kind only)
  DerivedCoeffs co;          // valid for Lq and Nonlinear kinds

  // z expressed in the sigma^T convention: sigma(t,x)^T z.
  Vec z_sigma_t(double t, const Vec& x, const Vec& z) const {
    return sigma(t, x).transpose() * z;
  }
};

ProblemSpec lq_problem(const LqSpec& spec);
ProblemSpec nonlinear_problem(const NonlinearSpec& spec);

// "lq1d", "lq2d", "lq6d", "nl3d".
ProblemSpec preset(const std::string& name);
std::vector<std::string> preset_names();

// Custom problem from a JSON file holding the LqSpec/NonlinearSpec matrices
// row-major plus "type": "lq" | "nonlinear".
ProblemSpec load_problem_file(const std::string& path);

}  // namespace fbsde
