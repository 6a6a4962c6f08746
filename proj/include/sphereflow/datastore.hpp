#pragma once

// Embedding stores, their on-disk formats, and synthetic spherical data.
//
// Binary layouts (little-endian, rows row-major, 32-bit floats):
//
//   pairs "SFL1":    magic[4] u32 version u32 d u64 n
//                    f32 image[n*d] f32 text[n*d] u64 fnv1a64
//   labeled "SFLE":  magic[4] u32 version u32 d u64 n u32 flags
//                    f32 points[n*d] i32 labels[n] (u8 correct[n] if flags&1)
//                    u64 fnv1a64
//
// The trailing checksum covers every preceding byte. Paths ending in ".gz"
// are read and written through zlib.

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sphereflow/sphere.hpp"

namespace sphereflow {

inline constexpr std::uint32_t kStoreVersion = 1;

/// Paired image/text embeddings; column i of each side is one embedding.
struct EmbeddingPairSet {
  Eigen::MatrixXf image;  // d x n
  Eigen::MatrixXf text;   // d x n

  int dim() const { return static_cast<int>(image.rows()); }
  std::size_t size() const { return static_cast<std::size_t>(image.cols()); }
  const Eigen::MatrixXf& side(Modality m) const { return m == Modality::Image ? image : text; }
};

struct LabeledEmbeddingSet {
  Eigen::MatrixXf points;        // d x n
  std::vector<std::int32_t> labels;
  std::vector<std::uint8_t> correct;  // empty when absent

  int dim() const { return static_cast<int>(points.rows()); }
  std::size_t size() const { return static_cast<std::size_t>(points.cols()); }
  bool has_correctness() const { return !correct.empty(); }
};

void save_pairs(const std::filesystem::path& path, const EmbeddingPairSet& set);
EmbeddingPairSet load_pairs(const std::filesystem::path& path);

void save_labeled(const std::filesystem::path& path, const LabeledEmbeddingSet& set);
LabeledEmbeddingSet load_labeled(const std::filesystem::path& path);

/// FNV-1a 64 of a byte range; the store and checkpoint checksum.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

/// Checksum of a whole file's contents (decompressed for ".gz").
std::uint64_t file_checksum(const std::filesystem::path& path);

// Synthetic data -------------------------------------------------------------

struct VmfComponent {
  Vec mean;            // unit-norm direction
  double kappa = 0.0;  // concentration; 0 is the uniform law
  double weight = 1.0;
};

enum class SyntheticKind { Vmf, VmfMixture, Uniform };

/// Optional correctness bits: P(correct | z) = sigmoid(offset + slope * log p(z)).
struct CorrectnessModel {
  double offset = 0.0;
  double slope = 1.0;
};

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::Uniform;
  int dim = 3;
  std::vector<VmfComponent> components;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::optional<CorrectnessModel> correctness;

  /// Throws InvalidArgument naming the offending field.
  void validate() const;
};

SyntheticKind parse_synthetic_kind(const std::string& text);

/// Draws `count` points; labels hold the mixture component index.
LabeledEmbeddingSet generate_synthetic(const SyntheticSpec& spec);

/// One vMF draw (Wood's rejection sampler; exact inverse CDF on S^2).
Vec sample_vmf(const VmfComponent& component, Rng& rng);

/// log density of a single vMF component w.r.t. the surface measure.
double analytic_vmf_logpdf(const SpherePoint& z, const VmfComponent& component);

/// log-sum-exp over the (weighted) components of a spec.
double mixture_logpdf(const SpherePoint& z, const SyntheticSpec& spec);

/// log I_nu(x) for nu >= 0, x > 0, by the power series summed in log space.
double log_bessel_i(double nu, double x);

/// n nearly-uniform nodes on S^2; each carries area 4 pi / n.
std::vector<SpherePoint> fibonacci_sphere(std::size_t n);

}  // namespace sphereflow
