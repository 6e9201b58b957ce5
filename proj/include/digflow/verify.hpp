#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "digflow/measures.hpp"

namespace digflow {

struct CheckReport {
  std::string name;
  int trials = 0;
  int violations = 0;
  double worst_margin = 0.0;  // most negative slack observed (>= 0 means clean)
  std::string parameters;
  double wall_ms = 0.0;

  bool pass() const { return violations == 0; }
  std::string to_json() const;
};

// Descent inequality on random gated quadratic objectives.
CheckReport check_gated_descent(int trials, std::uint64_t seed);

// Bracketing g_min * mean(loss) <= mean(g * loss) <= mean(loss).
CheckReport check_bracketing(int trials, std::uint64_t seed);

// Residual improvement with the aligned test residual field
// R(H) = -grad / ||grad||_F * ||H||_F on real flow losses.
CheckReport check_residual_improvement(int grid_size, int trials, std::uint64_t seed);

// Fixed-gate contraction on random SPD fields.
CheckReport check_contraction(int trials, std::uint64_t seed);

// Sliced-W2 stddev slope in M plus gate-Lipschitz error propagation.
CheckReport check_concentration(const std::vector<int>& m_values, int repeats,
                                std::uint64_t seed);

std::vector<CheckReport> run_all_checks(std::uint64_t seed);

}  // namespace digflow
