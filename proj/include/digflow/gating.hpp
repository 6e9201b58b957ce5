#pragma once

#include <cmath>
#include <stdexcept>

namespace digflow {

struct GateConfig {
  double tau = 1.0;     // temperature
  double g_min = 0.05;  // lower clip, in (0,1)

  void validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("gate: tau must be positive");
    if (!(g_min > 0.0 && g_min < 1.0))
      throw std::invalid_argument("gate: g_min must lie in (0,1)");
  }
};

// g = max{g_min, exp(-tau * D)}, monotone nonincreasing in D.
inline double gate(double discrepancy, const GateConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(discrepancy) || discrepancy < 0.0)
    throw std::invalid_argument("gate: discrepancy must be finite and nonnegative");
  return std::max(cfg.g_min, std::exp(-cfg.tau * discrepancy));
}

// sup |phi'| over D >= 0, attained at D = 0.
inline double gate_lipschitz_bound(const GateConfig& cfg) {
  cfg.validate();
  return cfg.tau;
}

}  // namespace digflow
