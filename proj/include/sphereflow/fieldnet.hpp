#pragma once

// Time- and modality-conditioned vector field v_t(z, c) on S^(d-1).
//
//   cond   = MLP(gamma(t)) + table[c]
//   h_0    = W_in z + b_in
//   h_i+1  = h_i + W_i SiLU(LN(h_i) * (1 + scale_i(cond)) + shift_i(cond)) + b_i
//   v      = (I - z z^T) (W_out h_B + b_out)
//
// LN carries no learned affine; the conditioning supplies it. W_out and b_out
// start at zero so the untrained field vanishes identically. Euclidean
// geometries skip the final tangent projection.
//
// All kernels are templated on the scalar type and instantiated for float
// (training) and double (scoring, gradient checks).

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sphereflow/sphere.hpp"

namespace sphereflow {

enum class Geometry : std::uint8_t {
  Riemannian = 0,
  EuclideanUniformBase = 1,
  EuclideanGaussianBase = 2,
};

Geometry parse_geometry(std::string_view text);
std::string_view geometry_name(Geometry g);
inline bool projects_output(Geometry g) { return g == Geometry::Riemannian; }

struct FieldShape {
  int dim = 0;      // d
  int hidden = 64;  // H
  int depth = 6;    // residual blocks
  int freqs = 256;  // sinusoidal frequencies F

  void validate() const;
  bool operator==(const FieldShape&) const = default;
};

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct TensorView {
  std::string name;
  std::span<T> data;
};

template <typename T>
struct FieldParams {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Col = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  struct Block {
    Mat scale_w;  // H x H, acts on cond
    Col scale_b;
    Mat shift_w;  // H x H, acts on cond
    Col shift_b;
    Mat lin_w;    // H x H, acts on the modulated activation
    Col lin_b;
  };

  FieldShape shape;
  Geometry geometry = Geometry::Riemannian;

  Mat in_w;     // H x d
  Col in_b;
  Mat time_w1;  // H x 2F
  Col time_b1;
  Mat time_w2;  // H x H
  Col time_b2;
  Mat modality;  // H x 2, one column per modality
  std::vector<Block> blocks;
  Mat out_w;  // d x H
  Col out_b;

  /// Every tensor zero.
  static FieldParams zeros(const FieldShape& shape, Geometry geometry = Geometry::Riemannian);
  /// Uniform fan-in init, output projection zero.
  static FieldParams initialized(const FieldShape& shape, std::uint64_t seed,
                                 Geometry geometry = Geometry::Riemannian);

  /// Tensors in checkpoint order.
  std::vector<TensorView<T>> tensors();
  std::vector<TensorView<const T>> tensors() const;

  std::size_t parameter_count() const;
  bool all_finite() const;

  template <typename U>
  FieldParams<U> cast() const;
};

using FieldParamsF = FieldParams<float>;
using FieldParamsD = FieldParams<double>;

/// gamma(t): [sin(w_0 t), cos(w_0 t), sin(w_1 t), ...], w_k = 2 pi 2^(10 k / F).
struct TimeEncoding {
  Eigen::VectorXd features;
};
TimeEncoding encode_time(double t, int freqs);

/// Column-batched training tuples: z_t, t, c and target u_t.
template <typename T>
struct FieldBatch {
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> z;  // d x N
  std::vector<double> t;
  std::vector<Modality> c;
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> u;  // d x N

  std::size_t size() const { return t.size(); }
};

template <typename T>
struct LossGrad {
  double loss = 0.0;
  FieldParams<T> grad;
  Eigen::VectorXd sample_loss;  // squared residual per column
};

/// Batched field evaluation; z is d x N, output d x N (projected in
/// Riemannian geometry). Inputs need not be unit-norm in Euclidean modes.
template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> forward_batch(
    const FieldParams<T>& params, const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& z,
    std::span<const double> t, std::span<const Modality> c);

/// Mean squared error against u and its exact gradient w.r.t. every parameter.
template <typename T>
LossGrad<T> loss_and_param_grad(const FieldParams<T>& params, const FieldBatch<T>& batch);

/// Single-point evaluation.
TangentVector forward(const FieldParamsD& params, const SpherePoint& z, double t, Modality c);

/// grad_z <v_t(z, c), probe> with the probe held fixed; the z-dependence of the
/// tangent projection is included.
Vec input_vjp(const FieldParamsD& params, const SpherePoint& z, double t, Modality c,
              const TangentVector& probe);

/// Field value and the VJPs for several cotangent columns at one raw
/// input point, sharing a single forward pass. Returns d x P gradients.
struct FieldJet {
  Vec value;               // v (projected when the geometry projects)
  Eigen::MatrixXd vjps;    // column j = grad_z <v, probes.col(j)>
};
FieldJet field_jet(const FieldParamsD& params, const Vec& z, double t, Modality c,
                   const Eigen::MatrixXd& probes);

/// Multiply-accumulate count of one single-point forward pass, times two.
std::uint64_t forward_flops(const FieldShape& shape);

}  // namespace sphereflow
