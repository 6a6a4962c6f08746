#include "sphereflow/sphere.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "sphereflow/error.hpp"

namespace sphereflow {

namespace {

void check_same_dim(const Vec& a, const Vec& b, const char* op) {
  if (a.size() != b.size()) {
    fail(ErrorKind::ShapeMismatch, std::string(op) + ": dimension " + std::to_string(a.size()) +
                                       " vs " + std::to_string(b.size()));
  }
}

// Stable angle between unit vectors, accurate near 0 and near pi.
double stable_angle(const Vec& z0, const Vec& z1) {
  return 2.0 * std::atan2((z1 - z0).norm(), (z1 + z0).norm());
}

double checked_angle(const SpherePoint& z0, const SpherePoint& z1, const char* op) {
  check_same_dim(z0.coords(), z1.coords(), op);
  const double theta = stable_angle(z0.coords(), z1.coords());
  if (theta > std::numbers::pi - kAntipodalGuard) {
    fail(ErrorKind::Degenerate, std::string(op) + ": antipodal endpoints, geodesic is not unique");
  }
  return theta;
}

void check_unit_interval(double t, const char* op) {
  if (!(t >= 0.0 && t <= 1.0)) {
    fail(ErrorKind::InvalidArgument, std::string(op) + ": t=" + std::to_string(t) + " outside [0,1]");
  }
}

}  // namespace

Modality parse_modality(std::string_view text) {
  if (text == "image" || text == "0") return Modality::Image;
  if (text == "text" || text == "1") return Modality::Text;
  fail(ErrorKind::InvalidArgument, "unknown modality '" + std::string(text) + "'");
}

std::string_view modality_name(Modality m) { return m == Modality::Image ? "image" : "text"; }

SpherePoint::SpherePoint(Vec coords) : coords_(std::move(coords)) {
  if (coords_.size() < 2) fail(ErrorKind::InvalidArgument, "sphere dimension must be >= 2");
  const double n = coords_.norm();
  if (!std::isfinite(n) || n == 0.0) {
    fail(ErrorKind::InvalidArgument, "cannot place a zero or non-finite vector on the sphere");
  }
  coords_ /= n;
}

SpherePoint SpherePoint::from_unit(Vec coords) { return SpherePoint(std::move(coords), Unchecked{}); }

TangentVector project_tangent(const SpherePoint& z, const Vec& v) {
  check_same_dim(z.coords(), v, "project_tangent");
  Vec out = v - v.dot(z.coords()) * z.coords();
  return {z, std::move(out)};
}

double geodesic_distance(const SpherePoint& z0, const SpherePoint& z1) {
  check_same_dim(z0.coords(), z1.coords(), "geodesic_distance");
  const double dot = std::clamp(z0.coords().dot(z1.coords()), -1.0 + kDotClamp, 1.0 - kDotClamp);
  return std::acos(dot);
}

SpherePoint slerp(const SpherePoint& z0, const SpherePoint& z1, double t) {
  check_unit_interval(t, "slerp");
  const double theta = checked_angle(z0, z1, "slerp");
  // Endpoints are returned bit-exactly.
  if (t == 0.0) return z0;
  if (t == 1.0) return z1;
  Vec out;
  if (theta < kSmallAngle) {
    out = (1.0 - t) * z0.coords() + t * z1.coords();
  } else {
    const double s = std::sin(theta);
    out = (std::sin((1.0 - t) * theta) / s) * z0.coords() + (std::sin(t * theta) / s) * z1.coords();
  }
  return SpherePoint(std::move(out));
}

TangentVector target_velocity(const SpherePoint& z0, const SpherePoint& z1, double t) {
  check_unit_interval(t, "target_velocity");
  const double theta = checked_angle(z0, z1, "target_velocity");
  SpherePoint zt = slerp(z0, z1, t);
  if (theta < kSmallAngle) {
    return project_tangent(zt, z1.coords() - z0.coords());
  }
  const double scale = theta / std::sin(theta);
  Vec u = scale * (std::cos(t * theta) * z1.coords() - std::cos((1.0 - t) * theta) * z0.coords());
  return {std::move(zt), std::move(u)};
}

SpherePoint sample_uniform(Eigen::Index d, Rng& rng) {
  if (d < 2) fail(ErrorKind::InvalidArgument, "sphere dimension must be >= 2");
  Vec xi(d);
  for (;;) {
    for (Eigen::Index i = 0; i < d; ++i) xi[i] = rng.normal();
    if (xi.norm() >= 1e-12) return SpherePoint(std::move(xi));
  }
}

double log_uniform_density(Eigen::Index d) {
  if (d < 2) fail(ErrorKind::InvalidArgument, "sphere dimension must be >= 2");
  const double half = 0.5 * static_cast<double>(d);
  const double log_volume = std::log(2.0) + half * std::log(std::numbers::pi) - std::lgamma(half);
  return -log_volume;
}

}  // namespace sphereflow
