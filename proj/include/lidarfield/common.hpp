#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lidarfield {

using Vec3 = Eigen::Vector3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

// Error taxonomy shared by the library and the CLI (exit codes 2/3/4).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic RNG. mt19937_64 has a standardized sequence, and all
// derived draws below avoid std::uniform_*_distribution (whose output is
// implementation-defined), so seeded runs reproduce across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return state_(); }

  // Uniform in [0,1) with 53 bits of mantissa.
  double uniform01() { return static_cast<double>(state_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n). Modulo bias is ~2^-64 and irrelevant here.
  std::uint64_t uniform_index(std::uint64_t n) { return state_() % n; }

  // Fisher-Yates; std::shuffle is implementation-defined.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream, e.g. one per parent block or per epoch.
  Rng fork(std::uint64_t stream) {
    return Rng(state_() ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
  }

 private:
  std::mt19937_64 state_;
};

// Runs fn(begin, end, worker_index) over [0, n) split into contiguous
// chunks, one per worker. Deterministic partition for a fixed worker
// count; workers == 1 runs inline.
void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t, std::size_t, int)>& fn);

int default_thread_count();

}  // namespace lidarfield
