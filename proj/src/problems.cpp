#include "fbsde/problems.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace fbsde {

namespace {

void check_symmetric(const Mat& m, const char* name) {
  require((m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12,
          std::string(name) + " must be symmetric");
}

DerivedCoeffs derive(const Mat& A, const Mat& B, const Vec& C,
                     const Mat& Sigma, const Mat& Rx, const Mat& Ru,
                     const Mat& G) {
  check_symmetric(Rx, "R_x");
  check_symmetric(Ru, "R_u");
  check_symmetric(G, "G");
  Eigen::FullPivLU<Mat> lu(Ru);
  require(lu.isInvertible(), "R_u must be invertible");
  Eigen::FullPivLU<Mat> lub(B);
  require(lub.rank() == B.cols(), "B must have full column rank");

  DerivedCoeffs co;
  co.A = A;
  co.Sigma = Sigma;
  co.Rx = Rx;
  co.G = G;
  co.RuInvBt = lu.solve(B.transpose());
  co.S = B * co.RuInvBt;
  co.AC = A * C;
  co.C = C;
  return co;
}

void wire_quadratic_costs(ProblemSpec& p) {
  const DerivedCoeffs& co = p.co;
  p.f = [co](double, const Vec& x, const Vec& z) {
    return x.dot(co.Rx * x) + 0.25 * z.dot(co.S * z);
  };
  p.g = [co](const Vec& x) { return x.dot(co.G * x); };
  p.vstar = [co](double, const Vec&, const Vec& z) {
    return Vec(-0.5 * co.RuInvBt * z);
  };
}

void check_dims(const Mat& A, const Mat& B, const Vec& C, const Mat& Sigma,
                const Mat& Rx, const Mat& Ru, const Mat& G, const Vec& x0) {
  const auto d = A.rows();
  require(A.cols() == d && Rx.rows() == d && Rx.cols() == d &&
              G.rows() == d && G.cols() == d && B.rows() == d &&
              C.size() == d && x0.size() == d && Sigma.rows() == d,
          "problem matrices disagree on the state dimension");
  require(Ru.rows() == B.cols() && Ru.cols() == B.cols(),
          "R_u must be ell x ell");
}

}  // namespace

ProblemSpec lq_problem(const LqSpec& spec) {
  check_dims(spec.A, spec.B, spec.C, spec.Sigma, spec.Rx, spec.Ru, spec.G,
             spec.x0);
  require(spec.T > 0.0, "T must be positive");
  ProblemSpec p;
  p.kind = ProblemKind::Lq;
  p.d = static_cast<int>(spec.A.rows());
  p.k_noise = static_cast<int>(spec.Sigma.cols());
  p.ell = static_cast<int>(spec.B.cols());
  p.T = spec.T;
  p.x0 = spec.x0;
  p.co = derive(spec.A, spec.B, spec.C, spec.Sigma, spec.Rx, spec.Ru, spec.G);
  p.lq = spec;

  const DerivedCoeffs& co = p.co;
  p.b = [co](double, const Vec& x, const Vec& z) {
    return Vec(co.AC - co.A * x - 0.5 * co.S * z);
  };
  p.sigma = [co](double, const Vec&) { return co.Sigma; };
  wire_quadratic_costs(p);
  return p;
}

ProblemSpec nonlinear_problem(const NonlinearSpec& spec) {
  check_dims(spec.A, spec.B, spec.C, spec.Sigma, spec.Rx, spec.Ru, spec.G,
             spec.x0);
  require(spec.T > 0.0, "T must be positive");
  require(spec.Sigma.cols() == spec.Sigma.rows(),
          "nonlinear diffusion needs a square Sigma");
  ProblemSpec p;
  p.kind = ProblemKind::Nonlinear;
  p.d = static_cast<int>(spec.A.rows());
  p.k_noise = static_cast<int>(spec.Sigma.cols());
  p.ell = static_cast<int>(spec.B.cols());
  p.T = spec.T;
  p.x0 = spec.x0;
  p.co = derive(spec.A, spec.B, spec.C, spec.Sigma, spec.Rx, spec.Ru, spec.G);

  const DerivedCoeffs& co = p.co;
  p.b = [co](double, const Vec& x, const Vec& z) {
    Vec s = (M_PI * co.C.array() * x.array()).sin();
    return Vec(co.A * s - 0.5 * co.S * z);
  };
  p.sigma = [co](double, const Vec& x) {
    return Mat(co.Sigma * (Mat::Identity(x.size(), x.size()) +
                           x * x.transpose()));
  };
  wire_quadratic_costs(p);
  return p;
}

namespace {

Mat diag(const Vec& v) { return v.asDiagonal(); }

ProblemSpec make_lq1d() {
  LqSpec s;
  s.A = Mat::Constant(1, 1, 1.0);
  s.B = Mat::Constant(1, 1, 1.0);
  s.C = Vec::Constant(1, 1.0);
  s.Sigma = Mat::Constant(1, 1, 0.5);
  s.Rx = Mat::Constant(1, 1, 1.0);
  s.Ru = Mat::Constant(1, 1, 1.0);
  s.G = Mat::Constant(1, 1, 1.0);
  s.x0 = Vec::Constant(1, 0.1);
  s.T = 0.5;
  ProblemSpec p = lq_problem(s);
  p.name = "lq1d";
  p.lambda_default = 0.0;
  return p;
}

ProblemSpec make_lq2d() {
  LqSpec s;
  s.A = Mat{{1.0, 0.0}, {0.0, 2.0}};
  s.B = Mat{{1.0, 0.5}, {-0.5, 1.0}};
  s.C = Vec{{0.1, 0.2}};
  s.Sigma = Mat{{0.05, 0.25}, {0.05, 0.25}};
  s.Rx = diag(Vec{{100.0, 1.0}});
  s.Ru = Mat::Identity(2, 2);
  s.G = diag(Vec{{1.0, 100.0}});
  s.x0 = Vec{{0.1, 0.1}};
  s.T = 0.5;
  ProblemSpec p = lq_problem(s);
  p.name = "lq2d";
  p.lambda_default = 0.0;
  return p;
}

ProblemSpec make_lq6d() {
  LqSpec s;
  s.A = diag(Vec{{1.0, 2.0, 3.0, 1.0, 2.0, 3.0}});
  s.B = Mat{{1.0, -1.0}, {1.0, 1.0}, {0.5, 1.0},
            {1.0, -1.0}, {0.0, -1.0}, {0.0, 1.0}};
  s.C = Vec{{-0.2, -0.1, 0.0, 0.0, 0.1, 0.2}};
  s.Sigma = diag(Vec{{0.05, 0.25, 0.05, 0.25, 0.05, 0.25}});
  s.Rx = diag(Vec{{25.0, 1.0, 25.0, 1.0, 25.0, 1.0}});
  s.Ru = Mat::Identity(2, 2);
  s.G = diag(Vec{{1.0, 25.0, 1.0, 25.0, 1.0, 25.0}});
  s.x0 = Vec::Constant(6, 0.1);
  s.T = 0.5;
  ProblemSpec p = lq_problem(s);
  p.name = "lq6d";
  p.lambda_default = 1.0;
  return p;
}

ProblemSpec make_nl3d() {
  NonlinearSpec s;
  s.A = Mat::Identity(3, 3);
  s.B = Mat{{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}};
  s.C = Vec::Constant(3, 1.0);
  s.Sigma = 0.1 * Mat::Identity(3, 3);
  s.Rx = diag(Vec{{5.0, 1.0, 1.0}});
  s.Ru = Mat::Identity(2, 2);
  s.G = diag(Vec{{1.0, 5.0, 1.0}});
  s.x0 = Vec::Constant(3, 0.1);
  s.T = 0.25;
  ProblemSpec p = nonlinear_problem(s);
  p.name = "nl3d";
  p.lambda_default = 1.0;
  p.reference_y0 = 0.2194;  // fine-grid value, no closed-form reference
  return p;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"lq1d", "lq2d", "lq6d", "nl3d"};
}

ProblemSpec preset(const std::string& name) {
  if (name == "lq1d") return make_lq1d();
  if (name == "lq2d") return make_lq2d();
  if (name == "lq6d") return make_lq6d();
  if (name == "nl3d") return make_nl3d();
  std::string all;
  for (const auto& n : preset_names()) all += " " + n;
  fail("unknown preset '" + name + "'; valid presets:" + all);
}

namespace {

using json = nlohmann::json;

Mat mat_from_json(const json& j, const char* name) {
  require(j.is_array() && !j.empty(), std::string(name) + ": expected rows");
  const auto rows = j.size();
  const auto cols = j.at(0).size();
  Mat m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    require(j.at(i).size() == cols, std::string(name) + ": ragged matrix");
    for (std::size_t jj = 0; jj < cols; ++jj)
      m(i, jj) = j.at(i).at(jj).get<double>();
  }
  return m;
}

Vec vec_from_json(const json& j, const char* name) {
  require(j.is_array() && !j.empty(), std::string(name) + ": expected array");
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j.at(i).get<double>();
  return v;
}

}  // namespace

ProblemSpec load_problem_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open problem file " + path);
  json j = json::parse(in);
  const std::string type = j.at("type").get<std::string>();

  auto fill = [&](auto& s) {
    s.A = mat_from_json(j.at("A"), "A");
    s.B = mat_from_json(j.at("B"), "B");
    s.C = vec_from_json(j.at("C"), "C");
    s.Sigma = mat_from_json(j.at("Sigma"), "Sigma");
    s.Rx = mat_from_json(j.at("Rx"), "Rx");
    s.Ru = mat_from_json(j.at("Ru"), "Ru");
    s.G = mat_from_json(j.at("G"), "G");
    s.x0 = vec_from_json(j.at("x0"), "x0");
    s.T = j.at("T").get<double>();
  };

  ProblemSpec p;
  if (type == "lq") {
    LqSpec s;
    fill(s);
    p = lq_problem(s);
  } else if (type == "nonlinear") {
    NonlinearSpec s;
    fill(s);
    p = nonlinear_problem(s);
  } else {
    fail("problem file type must be 'lq' or 'nonlinear', got '" + type + "'");
  }
  p.name = j.value("name", std::string("custom"));
  if (j.contains("lambda")) p.lambda_default = j.at("lambda").get<double>();
  if (j.contains("reference_y0"))
    p.reference_y0 = j.at("reference_y0").get<double>();
  return p;
}

}  // namespace fbsde
