#pragma once

// Log-density of a point under the learned flow by integrating the
// instantaneous change of variables backwards from t=1 to t=0 with a
// renormalized Euler scheme:
//
//   for k = K..1, t = k/K:
//     acc += div v_t(z) * dt      (at the pre-step point)
//     z   <- normalize(z - v_t(z) * dt)
//   log p_1(z_1) = log p_0(z_0) - acc
//
// The divergence is the intrinsic one on the sphere, tr(P J P) with
// P = I - z z^T and J the Jacobian of the projected field. Euclidean
// geometries use the ambient trace and skip renormalization.

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "sphereflow/fieldnet.hpp"
#include "sphereflow/rng.hpp"
#include "sphereflow/sphere.hpp"

namespace sphereflow {

enum class ProbeDistribution { Gaussian, Rademacher };
enum class DivergenceMode { Hutchinson, Exact };

ProbeDistribution parse_probe_distribution(std::string_view text);
DivergenceMode parse_divergence_mode(std::string_view text);
std::string_view probe_distribution_name(ProbeDistribution p);
std::string_view divergence_mode_name(DivergenceMode m);

struct IntegratorConfig {
  int steps = 5;   // K
  int probes = 1;  // M per step
  ProbeDistribution probe = ProbeDistribution::Gaussian;
  DivergenceMode mode = DivergenceMode::Hutchinson;
  std::uint64_t seed = 0;  // master seed for score_batch

  void validate() const;
};

struct ScoreRecord {
  double uncertainty = 0.0;          // -log_density
  double log_density = 0.0;          // base_log_density - divergence_integral
  double divergence_integral = 0.0;
  double base_log_density = 0.0;     // log p_0 at the terminal point
  Vec terminal_point;                // unit-norm
  int steps_used = 0;
  int probes_per_step = 0;
};

/// Field value and divergence at one point from a shared forward pass.
struct FlowEval {
  Vec velocity;
  double divergence = 0.0;
};

/// `z` is a raw vector so the Euclidean variants can leave the sphere; in
/// Riemannian geometry it must be unit-norm.
FlowEval evaluate_flow(const FieldParamsD& params, const Vec& z, double t, Modality c,
                       const IntegratorConfig& icfg, Rng& rng);

double divergence_estimate(const FieldParamsD& params, const SpherePoint& z, double t, Modality c,
                           const IntegratorConfig& icfg, Rng& rng);

ScoreRecord reverse_integrate(const FieldParamsD& params, const SpherePoint& z1, Modality c,
                              const IntegratorConfig& icfg, Rng& rng);

struct ScoreInput {
  SpherePoint point;
  Modality modality = Modality::Image;
};

/// Point i draws its probes from Rng(mix_seed(icfg.seed, i)), so the output
/// does not depend on `threads`.
std::vector<ScoreRecord> score_batch(const FieldParamsD& params, const std::vector<ScoreInput>& points,
                                     const IntegratorConfig& icfg, int threads = 1);

/// Tab-separated with a header row:
///   index modality uncertainty log_density steps probes
/// Reals use 17 significant digits.
void write_scores(const std::filesystem::path& path, const std::vector<ScoreInput>& points,
                  const std::vector<ScoreRecord>& records);

struct ScoreRow {
  std::size_t index = 0;
  Modality modality = Modality::Image;
  double uncertainty = 0.0;
  double log_density = 0.0;
  int steps = 0;
  int probes = 0;
};
std::vector<ScoreRow> read_scores(const std::filesystem::path& path);

}  // namespace sphereflow
