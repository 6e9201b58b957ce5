#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace digflow {

// SplitMix64 finalizer, used to derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Named randomness streams. Every consumer derives its own stream so that
// skipping one computation (e.g. the discrepancy) never shifts another.
enum class Stream : std::uint64_t {
  kBatch = 1,
  kFlow = 2,
  kSlice = 3,
  kInit = 4,
  kEval = 5,
  kRefine = 6,
  kGate = 7,
};

inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream,
                                 std::uint64_t step = 0) {
  std::uint64_t s = splitmix64(seed ^ (0x9e3779b97f4a7c15ULL *
                                       static_cast<std::uint64_t>(stream)));
  return splitmix64(s + step);
}

// Deterministic generator with a hand-rolled Box-Muller normal so that draws
// are bit-identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int n) { return static_cast<int>(gen_() % static_cast<std::uint64_t>(n)); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Eigen::VectorXd normal_vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Eigen::MatrixXd normal_matrix(int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = normal();
    return m;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace digflow
