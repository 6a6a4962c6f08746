#pragma once

// Conditional Riemannian flow-matching trainer: pair sampling, geodesic
// targets, regression loss and AdamW with linear warmup then constant lr.

#include <cstdint>
#include <functional>
#include <string>

#include "sphereflow/datastore.hpp"
#include "sphereflow/fieldnet.hpp"
#include "sphereflow/rng.hpp"

namespace sphereflow {

enum class Precision { F32, F64 };

struct FlowConfig {
  FieldShape shape{0, 512, 6, 256};
  double learning_rate = 1e-5;
  double weight_decay = 1e-5;
  int batch_size = 2048;
  std::int64_t total_steps = 400000;
  std::int64_t warmup_steps = 1000;
  std::uint64_t seed = 0;
  Geometry geometry = Geometry::Riemannian;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;      // max global norm; 0 disables clipping
  std::size_t max_pairs = 0;   // train on the first N pairs; 0 uses all
  Precision precision = Precision::F32;

  void validate() const;
};

/// Learning rate for the `step`-th update (1-based).
double learning_rate_at(const FlowConfig& cfg, std::int64_t step);

/// One regression target. z_t and u_t are raw vectors because the Euclidean
/// variants leave the sphere.
struct TrainingTuple {
  Vec z_t;
  double t = 0.0;
  Modality c = Modality::Image;
  Vec u_t;
};

TrainingTuple sample_training_tuple(const EmbeddingPairSet& pairs, const FlowConfig& cfg, Rng& rng);

template <typename T>
FieldBatch<T> sample_batch(const EmbeddingPairSet& pairs, const FlowConfig& cfg, Rng& rng);

template <typename T>
struct TrainState {
  FieldParams<T> params;
  FieldParams<T> first_moment;
  FieldParams<T> second_moment;
  std::int64_t step = 0;
  Rng rng{0};

  static TrainState fresh(const FlowConfig& cfg);
};

struct StepMetrics {
  std::int64_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  double loss_image = -1.0;  // per-modality batch means; -1 if absent
  double loss_text = -1.0;
};

/// Loss and gradient over fixed-size chunks, reduced in chunk order, so the
/// result does not depend on `threads`.
template <typename T>
LossGrad<T> batch_loss_and_grad(const FieldParams<T>& params, const FieldBatch<T>& batch, int threads);

/// One AdamW update with decoupled weight decay.
template <typename T>
StepMetrics train_step(TrainState<T>& state, const FieldBatch<T>& batch, const FlowConfig& cfg, int threads = 1);

template <typename T>
struct TrainCallbacks {
  std::int64_t metrics_every = 100;
  std::function<void(const StepMetrics&)> on_metrics;
  std::int64_t checkpoint_every = 0;  // 0: only the final state
  std::function<void(const TrainState<T>&)> on_checkpoint;
};

/// Runs cfg.total_steps updates from a fresh state.
template <typename T>
FieldParams<T> fit(const EmbeddingPairSet& pairs, const FlowConfig& cfg, const TrainCallbacks<T>& callbacks = {},
                   int threads = 1);

/// Continues an existing state up to cfg.total_steps.
template <typename T>
void fit_state(TrainState<T>& state, const EmbeddingPairSet& pairs, const FlowConfig& cfg,
               const TrainCallbacks<T>& callbacks = {}, int threads = 1);

}  // namespace sphereflow
