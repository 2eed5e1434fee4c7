#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace fbsde {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Derive an independent substream seed from a base seed and a stream tag.
// splitmix64 finalizer; cheap, stateless, and stable across platforms.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

[[noreturn]] inline void fail(const std::string& msg) { throw std::invalid_argument(msg); }

inline void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

// Runs fn(0..n-1) on up to `workers` threads. Tasks must write to disjoint
// slots; the task index alone determines what is computed, so results do not
// depend on the worker count.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

}  // namespace fbsde
