#include "sphereflow/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sphereflow/error.hpp"
#include "sphereflow/parallel.hpp"
#include "sphereflow/sphere.hpp"

namespace sphereflow {

namespace {

// Samples per gradient chunk. Chunk boundaries depend only on the batch size.
constexpr std::size_t kGradChunk = 256;
constexpr int kAntipodalRetries = 16;

template <typename T>
void axpy(FieldParams<T>& acc, const FieldParams<T>& x, double w) {
  auto dst = acc.tensors();
  auto src = x.tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    for (std::size_t k = 0; k < dst[i].data.size(); ++k) {
      dst[i].data[k] = static_cast<T>(dst[i].data[k] + w * src[i].data[k]);
    }
  }
}

template <typename T>
double squared_norm(const FieldParams<T>& p) {
  double s = 0.0;
  for (const auto& t : p.tensors()) {
    for (T v : t.data) s += static_cast<double>(v) * static_cast<double>(v);
  }
  return s;
}

template <typename T>
FieldBatch<T> slice(const FieldBatch<T>& b, std::size_t begin, std::size_t end) {
  FieldBatch<T> out;
  const auto n = static_cast<Eigen::Index>(end - begin);
  out.z = b.z.middleCols(static_cast<Eigen::Index>(begin), n);
  out.u = b.u.middleCols(static_cast<Eigen::Index>(begin), n);
  out.t.assign(b.t.begin() + begin, b.t.begin() + end);
  out.c.assign(b.c.begin() + begin, b.c.begin() + end);
  return out;
}

std::string step_diagnostic(std::int64_t step, double loss, double grad_norm) {
  std::ostringstream os;
  os.precision(17);
  os << "step " << step << ": loss=" << loss << " grad_norm=" << grad_norm;
  return os.str();
}

}  // namespace

void FlowConfig::validate() const {
  shape.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorKind::InvalidArgument, "learning_rate must be positive");
  }
  if (!(weight_decay >= 0.0)) fail(ErrorKind::InvalidArgument, "weight_decay must be >= 0");
  if (batch_size < 1) fail(ErrorKind::InvalidArgument, "batch_size must be positive");
  if (total_steps < 0) fail(ErrorKind::InvalidArgument, "total_steps must be >= 0");
  if (warmup_steps < 0) fail(ErrorKind::InvalidArgument, "warmup_steps must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail(ErrorKind::InvalidArgument, "adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail(ErrorKind::InvalidArgument, "adam_beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail(ErrorKind::InvalidArgument, "adam_eps must be positive");
  if (!(grad_clip >= 0.0)) fail(ErrorKind::InvalidArgument, "grad_clip must be >= 0");
}

double learning_rate_at(const FlowConfig& cfg, std::int64_t step) {
  if (cfg.warmup_steps <= 0) return cfg.learning_rate;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.warmup_steps));
  return cfg.learning_rate * frac;
}

TrainingTuple sample_training_tuple(const EmbeddingPairSet& pairs, const FlowConfig& cfg, Rng& rng) {
  if (pairs.size() == 0) fail(ErrorKind::InvalidArgument, "empty pair store");
  const std::size_t limit = cfg.max_pairs == 0 ? pairs.size() : std::min(cfg.max_pairs, pairs.size());
  const auto idx = static_cast<Eigen::Index>(rng.index(limit));
  const Modality c = rng.bernoulli(0.5) ? Modality::Text : Modality::Image;
  const Vec z1_raw = pairs.side(c).col(idx).cast<double>();
  const auto d = static_cast<Eigen::Index>(pairs.dim());

  TrainingTuple out;
  out.c = c;
  if (cfg.geometry == Geometry::Riemannian) {
    const SpherePoint z1(z1_raw);
    for (int attempt = 0;; ++attempt) {
      const SpherePoint z0 = sample_uniform(d, rng);
      const double t = rng.uniform();
      try {
        const SpherePoint zt = slerp(z0, z1, t);
        TangentVector ut = target_velocity(z0, z1, t);
        out.z_t = zt.coords();
        out.t = t;
        out.u_t = std::move(ut.vec);
        return out;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Degenerate || attempt + 1 >= kAntipodalRetries) throw;
      }
    }
  }

  const Vec z1 = z1_raw.normalized();
  Vec z0;
  if (cfg.geometry == Geometry::EuclideanGaussianBase) {
    z0.resize(d);
    for (Eigen::Index i = 0; i < d; ++i) z0[i] = rng.normal();
  } else {
    z0 = sample_uniform(d, rng).coords();
  }
  const double t = rng.uniform();
  out.t = t;
  out.z_t = (1.0 - t) * z0 + t * z1;
  out.u_t = z1 - z0;
  return out;
}

template <typename T>
FieldBatch<T> sample_batch(const EmbeddingPairSet& pairs, const FlowConfig& cfg, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(pairs.dim());
  const auto n = static_cast<Eigen::Index>(cfg.batch_size);
  FieldBatch<T> batch;
  batch.z.resize(d, n);
  batch.u.resize(d, n);
  batch.t.resize(static_cast<std::size_t>(n));
  batch.c.resize(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    TrainingTuple tup = sample_training_tuple(pairs, cfg, rng);
    batch.z.col(j) = tup.z_t.cast<T>();
    batch.u.col(j) = tup.u_t.cast<T>();
    batch.t[static_cast<std::size_t>(j)] = tup.t;
    batch.c[static_cast<std::size_t>(j)] = tup.c;
  }
  return batch;
}

template <typename T>
TrainState<T> TrainState<T>::fresh(const FlowConfig& cfg) {
  TrainState s;
  s.params = FieldParams<T>::initialized(cfg.shape, mix_seed(cfg.seed, 0), cfg.geometry);
  s.first_moment = FieldParams<T>::zeros(cfg.shape, cfg.geometry);
  s.second_moment = FieldParams<T>::zeros(cfg.shape, cfg.geometry);
  s.step = 0;
  s.rng = Rng(mix_seed(cfg.seed, 1));
  return s;
}

template <typename T>
LossGrad<T> batch_loss_and_grad(const FieldParams<T>& params, const FieldBatch<T>& batch, int threads) {
  const std::size_t n = batch.size();
  if (n == 0) fail(ErrorKind::InvalidArgument, "empty batch");
  const std::size_t chunks = (n + kGradChunk - 1) / kGradChunk;
  if (chunks == 1) return loss_and_param_grad(params, batch);

  std::vector<LossGrad<T>> parts(chunks);
  parallel_for(chunks, threads, [&](std::size_t k) {
    const std::size_t begin = k * kGradChunk;
    const std::size_t end = std::min(n, begin + kGradChunk);
    parts[k] = loss_and_param_grad(params, slice(batch, begin, end));
  });

  LossGrad<T> out;
  out.grad = FieldParams<T>::zeros(params.shape, params.geometry);
  out.sample_loss.resize(static_cast<Eigen::Index>(n));
  double loss_sum = 0.0;
  for (std::size_t k = 0; k < chunks; ++k) {
    const auto rows = parts[k].sample_loss.size();
    const double w = static_cast<double>(rows) / static_cast<double>(n);
    axpy(out.grad, parts[k].grad, w);
    out.sample_loss.segment(static_cast<Eigen::Index>(k * kGradChunk), rows) = parts[k].sample_loss;
    loss_sum += parts[k].sample_loss.sum();
  }
  out.loss = loss_sum / static_cast<double>(n);
  return out;
}

template <typename T>
StepMetrics train_step(TrainState<T>& state, const FieldBatch<T>& batch, const FlowConfig& cfg, int threads) {
  if (!(state.params.shape == cfg.shape)) fail(ErrorKind::ShapeMismatch, "train state does not match config shape");
  const std::int64_t step = state.step + 1;
  LossGrad<T> lg;
  try {
    lg = batch_loss_and_grad(state.params, batch, threads);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Numeric) throw;
    fail(ErrorKind::Numeric, "step " + std::to_string(step) + ": " + e.what());
  }
  const double grad_norm = std::sqrt(squared_norm(lg.grad));
  if (!std::isfinite(lg.loss) || !std::isfinite(grad_norm)) {
    fail(ErrorKind::Numeric, "non-finite training state at " + step_diagnostic(step, lg.loss, grad_norm));
  }

  const double lr = learning_rate_at(cfg, step);
  const double clip = (cfg.grad_clip > 0.0 && grad_norm > cfg.grad_clip) ? cfg.grad_clip / grad_norm : 1.0;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
  const double decay = lr * cfg.weight_decay;

  auto p = state.params.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  const auto g = std::as_const(lg.grad).tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t k = 0; k < p[i].data.size(); ++k) {
      const double gk = clip * static_cast<double>(g[i].data[k]);
      const double mk = b1 * static_cast<double>(m[i].data[k]) + (1.0 - b1) * gk;
      const double vk = b2 * static_cast<double>(v[i].data[k]) + (1.0 - b2) * gk * gk;
      m[i].data[k] = static_cast<T>(mk);
      v[i].data[k] = static_cast<T>(vk);
      double pk = static_cast<double>(p[i].data[k]);
      pk -= decay * pk;
      pk -= lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg.adam_eps);
      p[i].data[k] = static_cast<T>(pk);
    }
  }
  state.step = step;
  if (!state.params.all_finite()) {
    fail(ErrorKind::Numeric, "non-finite parameters after update at " + step_diagnostic(step, lg.loss, grad_norm));
  }

  StepMetrics out;
  out.step = step;
  out.loss = lg.loss;
  out.grad_norm = grad_norm;
  out.lr = lr;
  double sum[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto c = static_cast<std::size_t>(batch.c[j]);
    sum[c] += lg.sample_loss[static_cast<Eigen::Index>(j)];
    ++count[c];
  }
  if (count[0] > 0) out.loss_image = sum[0] / static_cast<double>(count[0]);
  if (count[1] > 0) out.loss_text = sum[1] / static_cast<double>(count[1]);
  return out;
}

template <typename T>
void fit_state(TrainState<T>& state, const EmbeddingPairSet& pairs, const FlowConfig& cfg,
               const TrainCallbacks<T>& callbacks, int threads) {
  cfg.validate();
  if (pairs.size() == 0) fail(ErrorKind::InvalidArgument, "empty pair store");
  if (pairs.dim() != cfg.shape.dim) {
    fail(ErrorKind::ShapeMismatch, "pair store has d=" + std::to_string(pairs.dim()) + " but config has d=" +
                                       std::to_string(cfg.shape.dim));
  }
  while (state.step < cfg.total_steps) {
    const FieldBatch<T> batch = sample_batch<T>(pairs, cfg, state.rng);
    const StepMetrics metrics = train_step(state, batch, cfg, threads);
    const bool last = state.step == cfg.total_steps;
    if (callbacks.on_metrics && callbacks.metrics_every > 0 &&
        (state.step % callbacks.metrics_every == 0 || state.step == 1 || last)) {
      callbacks.on_metrics(metrics);
    }
    if (!last && callbacks.on_checkpoint && callbacks.checkpoint_every > 0 &&
        state.step % callbacks.checkpoint_every == 0) {
      callbacks.on_checkpoint(state);
    }
  }
  if (callbacks.on_checkpoint) callbacks.on_checkpoint(state);
}

template <typename T>
FieldParams<T> fit(const EmbeddingPairSet& pairs, const FlowConfig& cfg, const TrainCallbacks<T>& callbacks,
                   int threads) {
  cfg.validate();
  TrainState<T> state = TrainState<T>::fresh(cfg);
  fit_state(state, pairs, cfg, callbacks, threads);
  return std::move(state.params);
}

#define SPHEREFLOW_INSTANTIATE(T)                                                                              \
  template FieldBatch<T> sample_batch<T>(const EmbeddingPairSet&, const FlowConfig&, Rng&);                     \
  template struct TrainState<T>;                                                                               \
  template LossGrad<T> batch_loss_and_grad<T>(const FieldParams<T>&, const FieldBatch<T>&, int);                \
  template StepMetrics train_step<T>(TrainState<T>&, const FieldBatch<T>&, const FlowConfig&, int);             \
  template void fit_state<T>(TrainState<T>&, const EmbeddingPairSet&, const FlowConfig&, const TrainCallbacks<T>&, \
                             int);                                                                             \
  template FieldParams<T> fit<T>(const EmbeddingPairSet&, const FlowConfig&, const TrainCallbacks<T>&, int);

SPHEREFLOW_INSTANTIATE(float)
SPHEREFLOW_INSTANTIATE(double)

#undef SPHEREFLOW_INSTANTIATE

}  // namespace sphereflow
