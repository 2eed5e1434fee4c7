#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fbsde/common.hpp"
#include "fbsde/tape.hpp"

namespace fbsde {

inline constexpr int kHidden = 20;

/// One Markov-map network: x -> W3 relu(W2 relu(W1 x + b1) + b2) + b3.
/// Biases are stored as n x 1 matrices so every block is a Mat.
struct MlpParams {
  Mat W1, b1, W2, b2, W3, b3;

  int input_dim() const { return static_cast<int>(W1.cols()); }
  int output_dim() const { return static_cast<int>(W3.rows()); }

  static MlpParams zeros(int d, int ell_out);

  template <class F>
  void for_each(F&& f) {
    f(W1, "W1"); f(b1, "b1"); f(W2, "W2"); f(b2, "b2"); f(W3, "W3"); f(b3, "b3");
  }
  template <class F>
  void for_each(F&& f) const {
    f(W1, "W1"); f(b1, "b1"); f(W2, "W2"); f(b2, "b2"); f(W3, "W3"); f(b3, "b3");
  }
};

/// N per-timestep networks plus the optional trainable y0 of the naive
/// method (present iff the method trains y0).
struct NetworkStack {
  std::vector<MlpParams> nets;
  std::optional<double> y0;

  int steps() const { return static_cast<int>(nets.size()); }
};

MlpParams init_params(int d, int ell_out, std::mt19937_64& rng);
NetworkStack init_stack(int N, int d, int ell_out, std::uint64_t seed,
                        bool with_y0);

Vec mlp_forward(const MlpParams& p, const Vec& x);

template <class E>
std::array<typename E::V, 6> lift_net(E& e, const MlpParams& p) {
  return {e.param(p.W1), e.param(p.b1), e.param(p.W2),
          e.param(p.b2), e.param(p.W3), e.param(p.b3)};
}

// Batched forward: X is d x M (one column per path).
template <class E>
typename E::V mlp_apply(E& e, const std::array<typename E::V, 6>& th,
                        typename E::V X) {
  auto h1 = e.relu(e.concat_affine(th[0], X, th[1]));
  auto h2 = e.relu(e.concat_affine(th[2], h1, th[3]));
  return e.concat_affine(th[4], h2, th[5]);
}

/// Gradient of every trainable block, same layout as the stack.
struct GradBlocks {
  std::vector<MlpParams> nets;
  double y0 = 0.0;

  static GradBlocks zeros_like(const NetworkStack& s);
  void accumulate(const GradBlocks& other);
};

struct AdamState {
  std::vector<MlpParams> m, v;
  double y0_m = 0.0, y0_v = 0.0;
  std::int64_t t = 0;

  static AdamState fresh(const NetworkStack& s);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

void adam_step(NetworkStack& params, const GradBlocks& grads, AdamState& st,
               double lr);

double lr_schedule(int epoch);

struct CheckpointMeta {
  int d = 0, ell_out = 0, N = 0;
  std::uint64_t seed = 0;
  std::string method = "robust";
  double lambda = 0.0;
  std::string problem;
};

void save_checkpoint(const std::string& path, const NetworkStack& s,
                     const CheckpointMeta& meta);
NetworkStack load_checkpoint(const std::string& path, CheckpointMeta* meta);

}  // namespace fbsde
