// SPDX-License-Identifier: Apache-2.0
//
// Encoder-decoder network mapping a raw waveform segment to one probability
// per output frame.
//
//   contracting block i: [conv -> bn -> act] x 2, plus the block input
//     (through a 1-wide projector when channel counts differ), then max-pool 2
//   bottleneck:          conv -> bn -> act
//   expanding block j:   transposed conv (stride 2 or 1), concatenated with
//     the max-pooled pre-pool output of the matching contracting block, then
//     conv -> bn -> act
//   head:                optional max-pool, 1-wide conv to one channel, logistic

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "defectkit/nn/layers.hpp"

namespace defectkit::nn {

enum class ActivationKind { LeakyRelu, Relu };

struct ModelConfig {
  int num_blocks = 13;
  int contract_filter_growth = 15;
  int expand_filter_growth = 5;
  /// Explicit channel schedules; when empty, block i (1-based) of the
  /// contracting path has growth * i channels and expanding block j (0-based)
  /// has growth * (num_blocks - j).
  std::vector<int> contract_channels;
  std::vector<int> expand_channels;
  int kernel_size = 5;
  ActivationKind activation = ActivationKind::LeakyRelu;
  std::size_t input_len = 16384;
  std::size_t output_len = 128;
  double output_bias_init_prior = 0.00078;
  std::uint64_t rng_seed = 0;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Resolved layer geometry of a configuration.
struct Architecture {
  struct Contract {
    std::size_t in_channels, channels, length;  ///< length before pooling
    bool projector;
  };
  struct Expand {
    std::size_t in_channels, channels, stride, length, skip_block, skip_channels, skip_pool;
  };
  std::vector<Contract> contract;
  std::size_t bottleneck_channels = 0;
  std::size_t bottleneck_length = 0;
  std::vector<Expand> expand;
  std::size_t head_pool = 1;  ///< max-pool before the output conv
  std::size_t output_len = 0;
  std::size_t kernel = 5;

  std::size_t doublings() const;
};

/// Validates the configuration and resolves every layer's shape. Throws
/// UsageError naming the offending block when the lengths do not work out.
Architecture resolve_architecture(const ModelConfig& cfg);

/// Trainable scalars implied by the geometry.
std::size_t param_count(const Architecture& a);

/// Human-readable layer table, parameter count and doubling schedule.
std::string model_summary(const ModelConfig& cfg);

inline double logit(double p) { return std::log(p / (1.0 - p)); }

template <typename T>
class HookNet {
 public:
  explicit HookNet(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const Architecture& architecture() const { return arch_; }

  /// x: (batch, input_len, 1). Returns probabilities of shape (batch, output_len, 1).
  /// Train mode uses batch statistics and keeps what backward needs.
  Tensor<T> forward(const Tensor<T>& x, bool train);

  /// Backpropagates d loss / d probability from the last train-mode forward
  /// and accumulates parameter gradients. Returns the input gradient.
  Tensor<T> backward(const Tensor<T>& dprob);

  void zero_grad();
  std::vector<Param<T>*> parameters();
  std::vector<Param<T>*> buffers();  ///< batch-norm running statistics
  std::vector<BatchNorm<T>*> batchnorms();
  std::size_t param_count() const;

  /// Runs a train-mode forward on x and sets every batch-norm's running
  /// statistics to the batch statistics it saw.
  void freeze_batchnorm(const Tensor<T>& x);

  void set_debug_checks(bool on) { debug_ = on; }

 private:
  struct ContractBlock {
    Conv1d<T> conv1, conv2;
    BatchNorm<T> bn1, bn2;
    std::optional<Conv1d<T>> proj;
    MaxPool<T> pool;
    Tensor<T> in, a1, a2, sum;
  };
  struct ExpandBlock {
    ConvTranspose1d<T> up;
    MaxPool<T> skip_pool;
    Conv1d<T> conv;
    BatchNorm<T> bn;
    Tensor<T> in, cat, a;
  };

  Tensor<T> forward_impl(const Tensor<T>& x, bool train, bool freeze);
  void check(const Tensor<T>& t, const std::string& where) const {
    if (debug_) require_finite(t, where);
  }

  ModelConfig cfg_;
  Architecture arch_;
  Activation<T> act_;
  std::vector<ContractBlock> contract_;
  Conv1d<T> bottleneck_conv_;
  BatchNorm<T> bottleneck_bn_;
  Tensor<T> bottleneck_in_, bottleneck_a_;
  std::vector<ExpandBlock> expand_;
  MaxPool<T> head_pool_;
  Conv1d<T> head_;
  Tensor<T> head_in_, prob_;
  bool debug_ = false;
};

extern template class HookNet<float>;
extern template class HookNet<double>;

}  // namespace defectkit::nn
