#pragma once

// Closed-form geometry of the unit hypersphere S^(d-1) embedded in R^d.
// Everything here is 64-bit and pure.

#include <Eigen/Core>

#include <cstdint>
#include <string_view>

#include "sphereflow/rng.hpp"

namespace sphereflow {

using Vec = Eigen::VectorXd;

/// Clamp applied to <z0, z1> before arccos.
inline constexpr double kDotClamp = 1e-7;
/// Below this angle slerp and the geodesic velocity switch to the linear fallback.
inline constexpr double kSmallAngle = 1e-5;
/// Pairs within this distance of pi are treated as antipodal.
inline constexpr double kAntipodalGuard = 1e-6;

enum class Modality : std::uint8_t { Image = 0, Text = 1 };

/// Accepts "image", "text", "0" and "1".
Modality parse_modality(std::string_view text);
std::string_view modality_name(Modality m);

/// A point on S^(d-1), d >= 2. Construction re-normalizes.
class SpherePoint {
 public:
  explicit SpherePoint(Vec coords);

  /// Wraps coordinates the caller guarantees are already unit-norm.
  static SpherePoint from_unit(Vec coords);

  const Vec& coords() const noexcept { return coords_; }
  Eigen::Index dim() const noexcept { return coords_.size(); }
  double operator[](Eigen::Index i) const { return coords_[i]; }

 private:
  struct Unchecked {};
  SpherePoint(Vec coords, Unchecked) : coords_(std::move(coords)) {}

  Vec coords_;
};

/// A vector in the tangent space T_base S^(d-1).
struct TangentVector {
  SpherePoint base;
  Vec vec;
};

/// v - <v, z> z.
TangentVector project_tangent(const SpherePoint& z, const Vec& v);

/// arccos of the clamped inner product; result lies in (0, pi).
double geodesic_distance(const SpherePoint& z0, const SpherePoint& z1);

/// Constant-speed great-circle interpolation, t in [0, 1].
/// Throws ErrorKind::Degenerate for antipodal pairs.
SpherePoint slerp(const SpherePoint& z0, const SpherePoint& z1, double t);

/// d/dt slerp(z0, z1, t), tangent at slerp(z0, z1, t) with norm theta.
TangentVector target_velocity(const SpherePoint& z0, const SpherePoint& z1, double t);

/// Uniform draw on S^(d-1) by normalizing a standard Gaussian.
SpherePoint sample_uniform(Eigen::Index d, Rng& rng);

/// -log Vol(S^(d-1)) = -log(2 pi^(d/2) / Gamma(d/2)).
double log_uniform_density(Eigen::Index d);

}  // namespace sphereflow
