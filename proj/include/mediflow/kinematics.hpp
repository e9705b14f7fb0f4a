#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

namespace mediflow {

// Intermediate products are carried in long double and rounded to double
// once, which keeps results within one ulp of the exact value.
using wide_t = long double;

/// Syringe geometry plus the linear actuator's full-step travel.
/// One cubic millimetre is one microlitre, so the plunger cross-section
/// times the step length gives the volume displaced per step in uL.
struct SyringeKinematics {
  double full_step_mm = 0.0018;
  double inner_diameter_mm = 14.50;
  double fluid_density_g_ml = 1.000;

  void check() const {
    if (!(std::isfinite(full_step_mm) && full_step_mm > 0))
      throw std::domain_error("full_step_mm must be positive and finite");
    if (!(std::isfinite(inner_diameter_mm) && inner_diameter_mm > 0))
      throw std::domain_error("inner_diameter_mm must be positive and finite");
    if (!(std::isfinite(fluid_density_g_ml) && fluid_density_g_ml > 0))
      throw std::domain_error("fluid_density_g_ml must be positive and finite");
  }

  wide_t volume_per_step_ul_wide() const {
    const wide_t r = wide_t(inner_diameter_mm) / 2;
    return std::numbers::pi_v<wide_t> * r * r * wide_t(full_step_mm);
  }

  double volume_per_step_ul() const { return static_cast<double>(volume_per_step_ul_wide()); }

  friend bool operator==(const SyringeKinematics&, const SyringeKinematics&) = default;
};

/// Nearest step count for a volume, ties away from zero.
inline std::int64_t volume_to_steps(double volume_ml, const SyringeKinematics& k) {
  if (!std::isfinite(volume_ml) || volume_ml < 0)
    throw std::domain_error("volume_ml must be finite and non-negative");
  k.check();
  if (volume_ml == 0) return 0;
  return std::llround(wide_t(volume_ml) * 1000 / k.volume_per_step_ul_wide());
}

/// Seconds between steps that yield `rate_ml_h`.
inline double rate_to_step_interval(double rate_ml_h, const SyringeKinematics& k) {
  if (!std::isfinite(rate_ml_h) || rate_ml_h <= 0)
    throw std::domain_error("rate_ml_h must be finite and positive");
  k.check();
  return static_cast<double>(k.volume_per_step_ul_wide() * 3600 / (wide_t(rate_ml_h) * 1000));
}

inline double steps_to_volume_ml(std::int64_t steps, const SyringeKinematics& k) {
  return static_cast<double>(wide_t(steps) * k.volume_per_step_ul_wide() / 1000);
}

}  // namespace mediflow
