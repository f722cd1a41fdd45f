// SPDX-License-Identifier: Apache-2.0
//
// Loss, optimiser, learning-rate schedule, checkpoints and the training loop.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "defectkit/eval.hpp"
#include "defectkit/nn/hooknet.hpp"
#include "defectkit/synth.hpp"

namespace defectkit {
class Dataset;
}

namespace defectkit::nn {

template <typename T>
struct LossResult {
  T value = T(0);
  Tensor<T> grad;  ///< d loss / d pred
};

/// sqrt(sum w (p - t)^2 / sum w) with weight w_pos where the target is 1.
template <typename T>
LossResult<T> weighted_rms_loss(const Tensor<T>& pred, const Tensor<T>& target, T w_pos) {
  if (!pred.same_shape(target)) throw UsageError("nn", "loss: prediction and target shapes differ");
  LossResult<T> r;
  r.grad = Tensor<T>(pred.batch, pred.channels, pred.length);
  T wsum = T(0), acc = T(0);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const T w = target.data[i] > T(0.5) ? w_pos : T(1);
    const T d = pred.data[i] - target.data[i];
    wsum += w;
    acc += w * d * d;
  }
  r.value = std::sqrt(acc / wsum);
  if (r.value > T(0)) {
    const T scale = T(1) / (wsum * r.value);
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
      const T w = target.data[i] > T(0.5) ? w_pos : T(1);
      r.grad.data[i] = scale * w * (pred.data[i] - target.data[i]);
    }
  }
  return r;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<Param<T>*>& params, double lr) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_[p->name].assign(p->size(), T(0));
        v_[p->name].assign(p->size(), T(0));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step = static_cast<T>(lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(cfg_.eps);
    for (auto* p : params) {
      auto& m = m_.at(p->name);
      auto& v = v_.at(p->name);
      for (std::size_t i = 0; i < p->size(); ++i) {
        const T g = p->grad[i];
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        p->value[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  std::map<std::string, std::vector<T>>& first_moments() { return m_; }
  std::map<std::string, std::vector<T>>& second_moments() { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::vector<T>> m_, v_;
};

/// Multiplies the learning rate by `factor` once the monitored value has
/// failed to improve for `patience` consecutive epochs.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience) : lr_(lr), factor_(factor), patience_(patience) {}

  /// Reference value measured before the first epoch.
  void set_baseline(double value) { best_ = value; }
  /// Records one epoch's value; returns the learning rate for the next epoch.
  double update(double value);

  double lr() const { return lr_; }
  double best() const { return best_; }
  int wait() const { return wait_; }
  void restore(double lr, double best, int wait) {
    lr_ = lr;
    best_ = best;
    wait_ = wait;
  }

 private:
  double lr_, factor_;
  int patience_;
  double best_ = -INFINITY;
  int wait_ = 0;
};

struct TrainConfig {
  std::size_t batch_size = 200;
  double learning_rate = 0.001;
  AdamConfig adam;
  double plateau_factor = 0.1;
  int plateau_patience = 10;
  int max_epochs = 40;
  /// Defaults to 1 / prior, capped at 1000.
  std::optional<double> positive_class_weight;
  double decision_threshold = 0.5;
  /// Stop once validation F1 reaches this value.
  std::optional<double> stop_at_val_f1;
  std::uint64_t rng_seed = 0;

  void validate() const;
  double resolved_positive_weight(double prior) const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Indexed supply of (segment, target) pairs.
class SegmentSource {
 public:
  virtual ~SegmentSource() = default;
  virtual std::size_t size() const = 0;
  virtual void get(std::size_t i, std::span<float> samples, TargetVector& target) const = 0;
};

class DatasetSource final : public SegmentSource {
 public:
  DatasetSource(const Dataset& ds, const std::string& split);
  std::size_t size() const override;
  void get(std::size_t i, std::span<float> samples, TargetVector& target) const override;

 private:
  const Dataset& ds_;
  std::string split_;
};

/// Synthetic carriers (one to three sines plus white noise) with clicks
/// inserted through the same route as cached click datasets. Item i depends
/// only on (seed, i).
class SyntheticClickSource final : public SegmentSource {
 public:
  SyntheticClickSource(std::size_t count, std::uint64_t seed, ClickConfig click);
  std::size_t size() const override { return count_; }
  void get(std::size_t i, std::span<float> samples, TargetVector& target) const override;

 private:
  std::size_t count_;
  std::uint64_t seed_;
  ClickConfig click_;
};

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  int epoch = 0;
  double val_accuracy = 0.0;
  double lr = 0.0;
  double plateau_best = 0.0;
  int plateau_wait = 0;
  std::uint64_t adam_steps = 0;
  std::map<std::string, std::vector<float>> weights;  ///< parameters and batch-norm statistics
  std::map<std::string, std::vector<std::size_t>> shapes;
  std::map<std::string, std::vector<float>> adam_m, adam_v;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Captures model weights (and optionally optimiser state) into a checkpoint.
Checkpoint capture(HookNet<float>& model, const Adam<float>* adam);
/// Copies weights into the model; throws DataError on name or shape mismatch.
void restore(HookNet<float>& model, const Checkpoint& c);
void restore(Adam<float>& adam, const Checkpoint& c);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  Metrics val;
  double lr = 0.0;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::optional<std::filesystem::path> best_checkpoint;
};

/// When out_dir is set, writes train_log.jsonl, checkpoints/epoch_NNN.ckpt and
/// best.ckpt there.
TrainResult train(HookNet<float>& model, const SegmentSource& train_set, const SegmentSource& val_set,
                  const TrainConfig& cfg, const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

struct Prediction {
  std::vector<TargetVector> probability;
  std::vector<TargetVector> binary;
};

/// Eval-mode inference; binary = probability > threshold.
Prediction predict(HookNet<float>& model, const SegmentSource& src, double threshold = 0.5,
                   std::size_t batch_size = 32);

TargetVector quantise(const TargetVector& prob, double threshold);

}  // namespace defectkit::nn
