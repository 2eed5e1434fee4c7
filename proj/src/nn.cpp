#include "fbsde/nn.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace fbsde {

namespace {

std::array<Mat*, 6> blocks(MlpParams& p) {
  return {&p.W1, &p.b1, &p.W2, &p.b2, &p.W3, &p.b3};
}
std::array<const Mat*, 6> blocks(const MlpParams& p) {
  return {&p.W1, &p.b1, &p.W2, &p.b2, &p.W3, &p.b3};
}
constexpr std::array<const char*, 6> kBlockNames = {"W1", "b1", "W2",
                                                    "b2", "W3", "b3"};

Mat he_normal(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / cols));
  Mat w(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) w(i, j) = normal(rng);
  return w;
}

}  // namespace

MlpParams MlpParams::zeros(int d, int ell_out) {
  MlpParams p;
  p.W1 = Mat::Zero(kHidden, d);
  p.b1 = Mat::Zero(kHidden, 1);
  p.W2 = Mat::Zero(kHidden, kHidden);
  p.b2 = Mat::Zero(kHidden, 1);
  p.W3 = Mat::Zero(ell_out, kHidden);
  p.b3 = Mat::Zero(ell_out, 1);
  return p;
}

MlpParams init_params(int d, int ell_out, std::mt19937_64& rng) {
  require(d >= 1 && ell_out >= 1, "init_params: dimensions must be >= 1");
  MlpParams p = MlpParams::zeros(d, ell_out);
  p.W1 = he_normal(kHidden, d, rng);
  p.W2 = he_normal(kHidden, kHidden, rng);
  p.W3 = he_normal(ell_out, kHidden, rng);
  return p;
}

NetworkStack init_stack(int N, int d, int ell_out, std::uint64_t seed,
                        bool with_y0) {
  NetworkStack s;
  s.nets.reserve(N);
  std::mt19937_64 rng = make_rng(derive_seed(seed, 0x6e657473));
  for (int k = 0; k < N; ++k) s.nets.push_back(init_params(d, ell_out, rng));
  if (with_y0) s.y0 = 0.0;
  return s;
}

Vec mlp_forward(const MlpParams& p, const Vec& x) {
  require(x.size() == p.W1.cols(),
          "mlp_forward: input size " + std::to_string(x.size()) +
              " does not match W1 cols " + std::to_string(p.W1.cols()));
  Vec h1 = (p.W1 * x + p.b1.col(0)).cwiseMax(0.0);
  Vec h2 = (p.W2 * h1 + p.b2.col(0)).cwiseMax(0.0);
  return p.W3 * h2 + p.b3.col(0);
}

GradBlocks GradBlocks::zeros_like(const NetworkStack& s) {
  GradBlocks g;
  g.nets.reserve(s.nets.size());
  for (const MlpParams& p : s.nets)
    g.nets.push_back(MlpParams::zeros(p.input_dim(), p.output_dim()));
  return g;
}

void GradBlocks::accumulate(const GradBlocks& other) {
  require(nets.size() == other.nets.size(), "GradBlocks: size mismatch");
  for (std::size_t k = 0; k < nets.size(); ++k) {
    auto dst = blocks(nets[k]);
    auto src = blocks(other.nets[k]);
    for (int i = 0; i < 6; ++i) *dst[i] += *src[i];
  }
  y0 += other.y0;
}

AdamState AdamState::fresh(const NetworkStack& s) {
  AdamState st;
  st.m.reserve(s.nets.size());
  st.v.reserve(s.nets.size());
  for (const MlpParams& p : s.nets) {
    st.m.push_back(MlpParams::zeros(p.input_dim(), p.output_dim()));
    st.v.push_back(MlpParams::zeros(p.input_dim(), p.output_dim()));
  }
  return st;
}

void adam_step(NetworkStack& params, const GradBlocks& grads, AdamState& st,
               double lr) {
  require(params.nets.size() == grads.nets.size() &&
              params.nets.size() == st.m.size(),
          "adam_step: block count mismatch");
  st.t += 1;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(st.t));

  for (std::size_t k = 0; k < params.nets.size(); ++k) {
    auto p = blocks(params.nets[k]);
    auto g = blocks(grads.nets[k]);
    auto m = blocks(st.m[k]);
    auto v = blocks(st.v[k]);
    for (int i = 0; i < 6; ++i) {
      if (!g[i]->allFinite())
        fail("adam_step: non-finite gradient in net " + std::to_string(k) +
             " " + kBlockNames[i]);
      *m[i] = kAdamBeta1 * *m[i] + (1.0 - kAdamBeta1) * *g[i];
      *v[i] = kAdamBeta2 * *v[i] +
              (1.0 - kAdamBeta2) * g[i]->cwiseProduct(*g[i]);
      p[i]->array() -= lr * (m[i]->array() / c1) /
                       ((v[i]->array() / c2).sqrt() + kAdamEps);
    }
  }

  if (params.y0.has_value()) {
    if (!std::isfinite(grads.y0))
      fail("adam_step: non-finite gradient in y0");
    st.y0_m = kAdamBeta1 * st.y0_m + (1.0 - kAdamBeta1) * grads.y0;
    st.y0_v = kAdamBeta2 * st.y0_v + (1.0 - kAdamBeta2) * grads.y0 * grads.y0;
    *params.y0 -=
        lr * (st.y0_m / c1) / (std::sqrt(st.y0_v / c2) + kAdamEps);
  }
}

double lr_schedule(int epoch) {
  require(epoch >= 0, "lr_schedule: epoch must be >= 0");
  if (epoch <= 2) return 0.1;
  return 0.1 * std::exp(-0.5 * (epoch - 2));
}

namespace {

using json = nlohmann::ordered_json;

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const json& j) {
  const auto rows = j.size();
  require(rows > 0, "checkpoint: empty matrix");
  const auto cols = j.at(0).size();
  Mat m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    require(j.at(i).size() == cols, "checkpoint: ragged matrix");
    for (std::size_t jj = 0; jj < cols; ++jj)
      m(i, jj) = j.at(i).at(jj).get<double>();
  }
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const NetworkStack& s,
                     const CheckpointMeta& meta) {
  json j;
  j["format"] = "fbsde-stack-v1";
  j["problem"] = meta.problem;
  j["method"] = meta.method;
  j["lambda"] = meta.lambda;
  j["d"] = meta.d;
  j["ell_out"] = meta.ell_out;
  j["N"] = meta.N;
  j["seed"] = meta.seed;
  if (s.y0.has_value())
    j["y0"] = *s.y0;
  else
    j["y0"] = nullptr;
  json nets = json::array();
  for (const MlpParams& p : s.nets) {
    json net;
    auto b = blocks(p);
    for (int i = 0; i < 6; ++i) net[kBlockNames[i]] = mat_to_json(*b[i]);
    nets.push_back(std::move(net));
  }
  j["nets"] = std::move(nets);
  std::ofstream out(path);
  require(out.good(), "save_checkpoint: cannot open " + path);
  out << j.dump(1) << "\n";
}

NetworkStack load_checkpoint(const std::string& path, CheckpointMeta* meta) {
  std::ifstream in(path);
  require(in.good(), "load_checkpoint: cannot open " + path);
  json j = json::parse(in);
  require(j.at("format").get<std::string>() == "fbsde-stack-v1",
          "load_checkpoint: unknown format");
  NetworkStack s;
  if (!j.at("y0").is_null()) s.y0 = j.at("y0").get<double>();
  for (const json& net : j.at("nets")) {
    MlpParams p;
    auto b = blocks(p);
    for (int i = 0; i < 6; ++i) *b[i] = mat_from_json(net.at(kBlockNames[i]));
    s.nets.push_back(std::move(p));
  }
  if (meta) {
    meta->problem = j.at("problem").get<std::string>();
    meta->method = j.at("method").get<std::string>();
    meta->lambda = j.at("lambda").get<double>();
    meta->d = j.at("d").get<int>();
    meta->ell_out = j.at("ell_out").get<int>();
    meta->N = j.at("N").get<int>();
    meta->seed = j.at("seed").get<std::uint64_t>();
  }
  return s;
}

}  // namespace fbsde
