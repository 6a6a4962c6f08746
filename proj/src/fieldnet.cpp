#include "sphereflow/fieldnet.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "sphereflow/error.hpp"
#include "sphereflow/rng.hpp"

namespace sphereflow {

namespace {

template <typename T>
using MatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using ColT = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowT = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

template <typename T>
T silu_grad(T x) {
  const T s = T(1) / (T(1) + std::exp(-x));
  return s * (T(1) + x * (T(1) - s));
}

// Activations of one forward pass, column per sample.
template <typename T>
struct Tape {
  MatT<T> z;
  MatT<T> gamma;
  MatT<T> time_pre;
  MatT<T> time_act;
  MatT<T> cond;
  std::vector<MatT<T>> h;  // depth + 1
  std::vector<MatT<T>> nrm;
  std::vector<RowT<T>> rstd;
  std::vector<MatT<T>> gain;  // 1 + scale(cond)
  std::vector<MatT<T>> pre;   // SiLU argument
  std::vector<MatT<T>> act;
  MatT<T> raw;
  MatT<T> out;
};

template <typename T>
RowT<T> column_dots(const MatT<T>& a, const MatT<T>& b) {
  return (a.array() * b.array()).colwise().sum();
}

template <typename T>
void run_forward(const FieldParams<T>& p, const MatT<T>& z, std::span<const double> t,
                 std::span<const Modality> c, Tape<T>& tape) {
  const FieldShape& s = p.shape;
  const Eigen::Index n = z.cols();
  if (z.rows() != s.dim) {
    fail(ErrorKind::ShapeMismatch, "field input has dimension " + std::to_string(z.rows()) +
                                       ", network expects " + std::to_string(s.dim));
  }
  if (static_cast<Eigen::Index>(t.size()) != n || static_cast<Eigen::Index>(c.size()) != n) {
    fail(ErrorKind::ShapeMismatch, "field batch: t/c lengths do not match the number of points");
  }

  tape.z = z;
  tape.gamma.resize(2 * s.freqs, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    tape.gamma.col(j) = encode_time(t[j], s.freqs).features.template cast<T>();
  }
  tape.time_pre = (p.time_w1 * tape.gamma).colwise() + p.time_b1;
  tape.time_act = tape.time_pre.unaryExpr([](T x) { return silu(x); });
  tape.cond = (p.time_w2 * tape.time_act).colwise() + p.time_b2;
  for (Eigen::Index j = 0; j < n; ++j) tape.cond.col(j) += p.modality.col(static_cast<int>(c[j]));
  if (!tape.cond.allFinite()) fail(ErrorKind::Numeric, "non-finite activation in conditioning embedding");

  const int depth = s.depth;
  tape.h.resize(depth + 1);
  tape.nrm.resize(depth);
  tape.rstd.resize(depth);
  tape.gain.resize(depth);
  tape.pre.resize(depth);
  tape.act.resize(depth);

  tape.h[0] = (p.in_w * z).colwise() + p.in_b;
  if (!tape.h[0].allFinite()) fail(ErrorKind::Numeric, "non-finite activation in input projection");
  for (int b = 0; b < depth; ++b) {
    const auto& blk = p.blocks[b];
    const MatT<T>& x = tape.h[b];
    const RowT<T> mean = x.colwise().mean();
    const MatT<T> centered = x.rowwise() - mean;
    const RowT<T> var = centered.array().square().colwise().mean();
    tape.rstd[b] = (var.array() + T(kLayerNormEps)).rsqrt();
    tape.nrm[b] = centered.array().rowwise() * tape.rstd[b].array();
    tape.gain[b] = ((blk.scale_w * tape.cond).colwise() + blk.scale_b).array() + T(1);
    const MatT<T> shift = (blk.shift_w * tape.cond).colwise() + blk.shift_b;
    tape.pre[b] = tape.nrm[b].array() * tape.gain[b].array() + shift.array();
    tape.act[b] = tape.pre[b].unaryExpr([](T v) { return silu(v); });
    tape.h[b + 1] = x + ((blk.lin_w * tape.act[b]).colwise() + blk.lin_b);
    if (!tape.h[b + 1].allFinite()) {
      fail(ErrorKind::Numeric, "non-finite activation in residual block " + std::to_string(b));
    }
  }

  tape.raw = (p.out_w * tape.h[depth]).colwise() + p.out_b;
  if (!tape.raw.allFinite()) fail(ErrorKind::Numeric, "non-finite activation in output projection");
  if (projects_output(p.geometry)) {
    const RowT<T> dots = column_dots<T>(z, tape.raw);
    tape.out = tape.raw - (z.array().rowwise() * dots.array()).matrix();
  } else {
    tape.out = tape.raw;
  }
}

// Cotangent on the projected output -> cotangent on the raw output.
template <typename T>
MatT<T> raw_cotangent(const FieldParams<T>& p, const MatT<T>& z, const MatT<T>& d_out) {
  if (!projects_output(p.geometry)) return d_out;
  const RowT<T> dots = column_dots<T>(z, d_out);
  return d_out - (z.array().rowwise() * dots.array()).matrix();
}

// Backward through one AdaLN block's residual branch with respect to its
// input h_b; d_h is updated in place. When `grad` is non-null the block's
// parameter gradients and the cond cotangent are accumulated too.
template <typename T>
void block_backward(const FieldParams<T>& p, const Tape<T>& tape, int b, MatT<T>& d_h,
                    FieldParams<T>* grad, MatT<T>* d_cond) {
  const auto& blk = p.blocks[b];
  if (grad) {
    auto& g = grad->blocks[b];
    g.lin_w.noalias() = d_h * tape.act[b].transpose();
    g.lin_b = d_h.rowwise().sum();
  }
  const MatT<T> d_act = blk.lin_w.transpose() * d_h;
  const MatT<T> d_pre =
      d_act.array() * tape.pre[b].unaryExpr([](T v) { return silu_grad(v); }).array();
  const MatT<T> d_nrm = d_pre.array() * tape.gain[b].array();
  if (grad) {
    auto& g = grad->blocks[b];
    const MatT<T> d_scale = d_pre.array() * tape.nrm[b].array();
    g.scale_w.noalias() = d_scale * tape.cond.transpose();
    g.scale_b = d_scale.rowwise().sum();
    g.shift_w.noalias() = d_pre * tape.cond.transpose();
    g.shift_b = d_pre.rowwise().sum();
    d_cond->noalias() += blk.scale_w.transpose() * d_scale;
    d_cond->noalias() += blk.shift_w.transpose() * d_pre;
  }
  const RowT<T> m1 = d_nrm.colwise().mean();
  const RowT<T> m2 = (d_nrm.array() * tape.nrm[b].array()).colwise().mean();
  MatT<T> d_x = d_nrm.rowwise() - m1;
  d_x.array() -= tape.nrm[b].array().rowwise() * m2.array();
  d_x.array().rowwise() *= tape.rstd[b].array();
  d_h += d_x;
}

template <typename T>
MatT<T> run_input_backward(const FieldParams<T>& p, const Tape<T>& tape, const MatT<T>& cotangent) {
  const int depth = p.shape.depth;
  const MatT<T> d_raw = raw_cotangent(p, tape.z, cotangent);
  MatT<T> d_h = p.out_w.transpose() * d_raw;
  for (int b = depth - 1; b >= 0; --b) block_backward<T>(p, tape, b, d_h, nullptr, nullptr);
  MatT<T> d_z = p.in_w.transpose() * d_h;
  if (projects_output(p.geometry)) {
    // d/dz of -(z . raw)(z . e) beyond the path through raw.
    const RowT<T> z_raw = column_dots<T>(tape.z, tape.raw);
    const RowT<T> e_z = column_dots<T>(cotangent, tape.z);
    d_z.array() -= cotangent.array().rowwise() * z_raw.array();
    d_z.array() -= tape.raw.array().rowwise() * e_z.array();
  }
  return d_z;
}

// Repeats a single-column tape across `cols` columns.
template <typename T>
Tape<T> broadcast_tape(const Tape<T>& one, Eigen::Index cols) {
  auto rep = [cols](const MatT<T>& m) -> MatT<T> { return m.replicate(1, cols); };
  Tape<T> out;
  out.z = rep(one.z);
  out.cond = rep(one.cond);
  out.raw = rep(one.raw);
  out.out = rep(one.out);
  out.h.reserve(one.h.size());
  for (const auto& m : one.h) out.h.push_back(rep(m));
  for (std::size_t b = 0; b < one.nrm.size(); ++b) {
    out.nrm.push_back(rep(one.nrm[b]));
    out.rstd.push_back(one.rstd[b].replicate(1, cols));
    out.gain.push_back(rep(one.gain[b]));
    out.pre.push_back(rep(one.pre[b]));
    out.act.push_back(rep(one.act[b]));
  }
  return out;
}

template <typename T>
void resize_like_shape(FieldParams<T>& p) {
  const FieldShape& s = p.shape;
  const int h = s.hidden;
  p.in_w.setZero(h, s.dim);
  p.in_b.setZero(h);
  p.time_w1.setZero(h, 2 * s.freqs);
  p.time_b1.setZero(h);
  p.time_w2.setZero(h, h);
  p.time_b2.setZero(h);
  p.modality.setZero(h, 2);
  p.blocks.assign(s.depth, {});
  for (auto& blk : p.blocks) {
    blk.scale_w.setZero(h, h);
    blk.scale_b.setZero(h);
    blk.shift_w.setZero(h, h);
    blk.shift_b.setZero(h);
    blk.lin_w.setZero(h, h);
    blk.lin_b.setZero(h);
  }
  p.out_w.setZero(s.dim, h);
  p.out_b.setZero(s.dim);
}

template <typename T, typename M>
void fill_uniform(M& m, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  }
}

template <typename P, typename V>
std::vector<V> collect_tensors(P& p) {
  std::vector<V> out;
  auto add = [&out](std::string name, auto& m) {
    out.push_back(V{std::move(name), {m.data(), static_cast<std::size_t>(m.size())}});
  };
  add("in.weight", p.in_w);
  add("in.bias", p.in_b);
  add("time.0.weight", p.time_w1);
  add("time.0.bias", p.time_b1);
  add("time.1.weight", p.time_w2);
  add("time.1.bias", p.time_b2);
  add("modality.table", p.modality);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const std::string prefix = "block." + std::to_string(b) + ".";
    add(prefix + "scale.weight", p.blocks[b].scale_w);
    add(prefix + "scale.bias", p.blocks[b].scale_b);
    add(prefix + "shift.weight", p.blocks[b].shift_w);
    add(prefix + "shift.bias", p.blocks[b].shift_b);
    add(prefix + "linear.weight", p.blocks[b].lin_w);
    add(prefix + "linear.bias", p.blocks[b].lin_b);
  }
  add("out.weight", p.out_w);
  add("out.bias", p.out_b);
  return out;
}

}  // namespace

Geometry parse_geometry(std::string_view text) {
  if (text == "riemannian") return Geometry::Riemannian;
  if (text == "euclidean_uniform_base") return Geometry::EuclideanUniformBase;
  if (text == "euclidean_gaussian_base") return Geometry::EuclideanGaussianBase;
  fail(ErrorKind::InvalidArgument, "unknown geometry_mode '" + std::string(text) + "'");
}

std::string_view geometry_name(Geometry g) {
  switch (g) {
    case Geometry::Riemannian: return "riemannian";
    case Geometry::EuclideanUniformBase: return "euclidean_uniform_base";
    case Geometry::EuclideanGaussianBase: return "euclidean_gaussian_base";
  }
  return "riemannian";
}

void FieldShape::validate() const {
  if (dim < 2) fail(ErrorKind::InvalidArgument, "d must be >= 2");
  if (hidden < 1) fail(ErrorKind::InvalidArgument, "hidden must be positive");
  if (depth < 1) fail(ErrorKind::InvalidArgument, "depth must be positive");
  if (freqs < 1) fail(ErrorKind::InvalidArgument, "freqs must be positive");
}

TimeEncoding encode_time(double t, int freqs) {
  TimeEncoding enc;
  enc.features.resize(2 * freqs);
  for (int k = 0; k < freqs; ++k) {
    const double omega = 2.0 * std::numbers::pi * std::exp2(10.0 * k / freqs);
    enc.features[2 * k] = std::sin(omega * t);
    enc.features[2 * k + 1] = std::cos(omega * t);
  }
  return enc;
}

template <typename T>
FieldParams<T> FieldParams<T>::zeros(const FieldShape& shape, Geometry geometry) {
  shape.validate();
  FieldParams p;
  p.shape = shape;
  p.geometry = geometry;
  resize_like_shape(p);
  return p;
}

template <typename T>
FieldParams<T> FieldParams<T>::initialized(const FieldShape& shape, std::uint64_t seed,
                                           Geometry geometry) {
  FieldParams p = zeros(shape, geometry);
  Rng rng(seed);
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(shape.dim));
  const double hid_bound = 1.0 / std::sqrt(static_cast<double>(shape.hidden));
  const double enc_bound = 1.0 / std::sqrt(2.0 * shape.freqs);
  fill_uniform<T>(p.in_w, in_bound, rng);
  fill_uniform<T>(p.in_b, in_bound, rng);
  fill_uniform<T>(p.time_w1, enc_bound, rng);
  fill_uniform<T>(p.time_b1, enc_bound, rng);
  fill_uniform<T>(p.time_w2, hid_bound, rng);
  fill_uniform<T>(p.time_b2, hid_bound, rng);
  fill_uniform<T>(p.modality, 1.0, rng);
  for (auto& blk : p.blocks) {
    fill_uniform<T>(blk.scale_w, hid_bound, rng);
    fill_uniform<T>(blk.scale_b, hid_bound, rng);
    fill_uniform<T>(blk.shift_w, hid_bound, rng);
    fill_uniform<T>(blk.shift_b, hid_bound, rng);
    fill_uniform<T>(blk.lin_w, hid_bound, rng);
    fill_uniform<T>(blk.lin_b, hid_bound, rng);
  }
  return p;
}

template <typename T>
std::vector<TensorView<T>> FieldParams<T>::tensors() {
  return collect_tensors<FieldParams<T>, TensorView<T>>(*this);
}

template <typename T>
std::vector<TensorView<const T>> FieldParams<T>::tensors() const {
  return collect_tensors<const FieldParams<T>, TensorView<const T>>(*this);
}

template <typename T>
std::size_t FieldParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.data.size();
  return n;
}

template <typename T>
bool FieldParams<T>::all_finite() const {
  for (const auto& t : tensors()) {
    for (T v : t.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template <typename T>
template <typename U>
FieldParams<U> FieldParams<T>::cast() const {
  FieldParams<U> out = FieldParams<U>::zeros(shape, geometry);
  auto src = tensors();
  auto dst = out.tensors();
  for (std::size_t i = 0; i < src.size(); ++i) {
    for (std::size_t k = 0; k < src[i].data.size(); ++k) dst[i].data[k] = static_cast<U>(src[i].data[k]);
  }
  return out;
}

template <typename T>
MatT<T> forward_batch(const FieldParams<T>& params, const MatT<T>& z, std::span<const double> t,
                      std::span<const Modality> c) {
  Tape<T> tape;
  run_forward(params, z, t, c, tape);
  return std::move(tape.out);
}

template <typename T>
LossGrad<T> loss_and_param_grad(const FieldParams<T>& params, const FieldBatch<T>& batch) {
  const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) fail(ErrorKind::InvalidArgument, "empty training batch");
  if (batch.u.rows() != params.shape.dim || batch.u.cols() != n || batch.z.cols() != n) {
    fail(ErrorKind::ShapeMismatch, "training batch z/u shapes disagree with the network");
  }
  Tape<T> tape;
  run_forward(params, batch.z, batch.t, batch.c, tape);

  const MatT<T> diff = tape.out - batch.u;
  LossGrad<T> result;
  result.sample_loss = diff.template cast<double>().colwise().squaredNorm().transpose();
  result.loss = result.sample_loss.sum() / static_cast<double>(n);
  if (!std::isfinite(result.loss)) fail(ErrorKind::Numeric, "non-finite training loss");

  result.grad = FieldParams<T>::zeros(params.shape, params.geometry);
  const MatT<T> d_out = diff * T(2.0 / static_cast<double>(n));

  FieldParams<T>& g = result.grad;
  const int depth = params.shape.depth;
  const MatT<T> d_raw = raw_cotangent(params, tape.z, d_out);
  g.out_w.noalias() = d_raw * tape.h[depth].transpose();
  g.out_b = d_raw.rowwise().sum();
  MatT<T> d_h = params.out_w.transpose() * d_raw;
  MatT<T> d_cond = MatT<T>::Zero(params.shape.hidden, n);
  for (int b = depth - 1; b >= 0; --b) block_backward(params, tape, b, d_h, &g, &d_cond);
  g.in_w.noalias() = d_h * tape.z.transpose();
  g.in_b = d_h.rowwise().sum();

  for (Eigen::Index j = 0; j < n; ++j) g.modality.col(static_cast<int>(batch.c[j])) += d_cond.col(j);
  g.time_w2.noalias() = d_cond * tape.time_act.transpose();
  g.time_b2 = d_cond.rowwise().sum();
  const MatT<T> d_time_act = params.time_w2.transpose() * d_cond;
  const MatT<T> d_time_pre =
      d_time_act.array() * tape.time_pre.unaryExpr([](T v) { return silu_grad(v); }).array();
  g.time_w1.noalias() = d_time_pre * tape.gamma.transpose();
  g.time_b1 = d_time_pre.rowwise().sum();
  return result;
}

TangentVector forward(const FieldParamsD& params, const SpherePoint& z, double t, Modality c) {
  const Eigen::MatrixXd zm = z.coords();
  const double ts[1] = {t};
  const Modality cs[1] = {c};
  Eigen::MatrixXd out = forward_batch<double>(params, zm, ts, cs);
  return {z, out.col(0)};
}

FieldJet field_jet(const FieldParamsD& params, const Vec& z, double t, Modality c,
                   const Eigen::MatrixXd& probes) {
  if (probes.rows() != params.shape.dim) {
    fail(ErrorKind::ShapeMismatch, "probe dimension does not match the network");
  }
  Tape<double> tape;
  const Eigen::MatrixXd zm = z;
  const double ts[1] = {t};
  const Modality cs[1] = {c};
  run_forward<double>(params, zm, ts, cs, tape);
  FieldJet jet;
  jet.value = tape.out.col(0);
  if (probes.cols() == 0) {
    jet.vjps.resize(params.shape.dim, 0);
    return jet;
  }
  const Tape<double> wide = probes.cols() == 1 ? std::move(tape) : broadcast_tape(tape, probes.cols());
  jet.vjps = run_input_backward<double>(params, wide, probes);
  return jet;
}

Vec input_vjp(const FieldParamsD& params, const SpherePoint& z, double t, Modality c,
              const TangentVector& probe) {
  if (probe.vec.size() != z.dim()) fail(ErrorKind::ShapeMismatch, "probe dimension mismatch");
  if (std::abs(probe.vec.dot(z.coords())) > 1e-6) {
    fail(ErrorKind::InvalidArgument, "input_vjp: probe is not tangent at z");
  }
  const Eigen::MatrixXd probes = probe.vec;
  return field_jet(params, z.coords(), t, c, probes).vjps.col(0);
}

std::uint64_t forward_flops(const FieldShape& s) {
  const std::uint64_t h = s.hidden;
  const std::uint64_t macs = h * s.dim                          // input projection
                             + h * 2 * s.freqs + h * h          // time MLP
                             + static_cast<std::uint64_t>(s.depth) * 3 * h * h  // blocks
                             + static_cast<std::uint64_t>(s.dim) * h;            // output
  return 2 * macs;
}

template struct FieldParams<float>;
template struct FieldParams<double>;
template FieldParams<double> FieldParams<float>::cast<double>() const;
template FieldParams<float> FieldParams<double>::cast<float>() const;
template FieldParams<float> FieldParams<float>::cast<float>() const;
template FieldParams<double> FieldParams<double>::cast<double>() const;

template MatT<float> forward_batch<float>(const FieldParams<float>&, const MatT<float>&,
                                          std::span<const double>, std::span<const Modality>);
template MatT<double> forward_batch<double>(const FieldParams<double>&, const MatT<double>&,
                                            std::span<const double>, std::span<const Modality>);
template LossGrad<float> loss_and_param_grad<float>(const FieldParams<float>&, const FieldBatch<float>&);
template LossGrad<double> loss_and_param_grad<double>(const FieldParams<double>&,
                                                      const FieldBatch<double>&);

}  // namespace sphereflow
