#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "snr/ops.hpp"
#include "snr/tape.hpp"
#include "snr/tensor.hpp"

namespace snr::model {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class BlockKind { kBasic, kBottleneck };

// Freezable groups of the network, in forward order.
enum class Stage { kStem, kStage1, kStage2, kStage3, kStage4, kHead };

std::string_view to_string(BlockKind kind);
BlockKind block_kind_from_string(std::string_view name);
std::string_view to_string(Stage stage);
Stage stage_from_string(std::string_view name);
std::set<Stage> all_stages();

struct NetworkConfig {
  int input_channels = 3;
  int input_size = 224;
  BlockKind block_kind = BlockKind::kBottleneck;
  std::array<int, 4> stage_depths{3, 4, 6, 3};
  // Inner width of each stage; bottleneck blocks emit 4x this many channels.
  // The stem emits stage_widths[0] channels.
  std::array<int, 4> stage_widths{64, 128, 256, 512};
  int dense_units = 256;
  double dropout_rate = 0.3;
  std::set<Stage> frozen_stages{Stage::kStem, Stage::kStage1, Stage::kStage2};
  std::uint64_t seed = 0;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  // Throws ConfigError, including when input_size does not halve cleanly
  // through the stem and the strided stages.
  void validate() const;
  // Channel count of the final stage's output.
  int feature_channels() const;
};

// Desk-scale configuration: basic blocks, one block per stage.
NetworkConfig tiny_config(int input_size, std::array<int, 4> widths, int dense_units = 16);

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Stage stage;
  bool trainable = true;
};

template <typename T>
struct BatchNormState {
  Tensor<T> scale;
  Tensor<T> shift;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
  bool frozen = false;
};

template <typename T>
struct ConvBn {
  std::string name;
  Tensor<T> weight;  // OIHW, no bias; the batch norm supplies the shift
  BatchNormState<T> bn;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

template <typename T>
struct ResidualBlock {
  std::string name;
  Stage stage = Stage::kStage1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<ConvBn<T>> branch;
  std::optional<ConvBn<T>> projection;  // absent means identity shortcut
};

enum class Mode { kTrain, kEval };

// Per-call forward context. Activations are addressable by name (see
// Network::activation_names); the one named `capture` is returned, and when
// `capture_as_leaf` is set it is marked requires_grad so a tape records
// everything downstream of it even if no parameter is trainable.
template <typename T>
struct ForwardContext {
  Mode mode = Mode::kEval;
  Tape<T>* tape = nullptr;
  std::mt19937_64* dropout_rng = nullptr;  // required in train mode when dropout_rate > 0
  std::string capture;
  bool capture_as_leaf = false;
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;         // N×1, pre-sigmoid
  Tensor<T> probabilities;  // N×1, in (0, 1)
  Tensor<T> captured;       // undefined unless a capture name matched
};

// One residual block: ReLU(F(x) + shortcut(x)).
template <typename T>
Tensor<T> residual_block_forward(const Tensor<T>& x, ResidualBlock<T>& block, ForwardContext<T>& ctx,
                                 Tensor<T>* captured = nullptr);

template <typename T>
class Network {
 public:
  // Builds and initializes the network deterministically from cfg.seed.
  explicit Network(NetworkConfig cfg);

  // Tensors are shared handles, so a copy would alias the weights.
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const NetworkConfig& config() const { return cfg_; }

  ForwardResult<T> forward(const Tensor<T>& input, ForwardContext<T>& ctx);
  ForwardResult<T> forward(const Tensor<T>& input, Mode mode = Mode::kEval);

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  Parameter<T>& parameter(std::string_view name);

  // Updates trainable flags; batch norms in frozen stages also stop updating
  // their running statistics and normalize with them in train mode.
  void set_frozen(const std::set<Stage>& stages);
  void set_frozen(const std::vector<std::string>& stage_names);

  // Every persisted tensor (parameters and batch-norm running statistics) in
  // a fixed order.
  std::vector<std::pair<std::string, Tensor<T>>> state() const;
  std::vector<Tensor<T>> snapshot() const;
  void restore(const std::vector<Tensor<T>>& snapshot);

  std::vector<std::string> activation_names() const;
  // Name of the last convolution in stage 4, the default Grad-CAM target.
  std::string last_conv_name() const;

  std::vector<ResidualBlock<T>>& blocks() { return blocks_; }
  ConvBn<T>& stem() { return stem_; }
  Tensor<T>& head_hidden_weight() { return fc1_weight_; }
  Tensor<T>& head_hidden_bias() { return fc1_bias_; }
  Tensor<T>& head_output_weight() { return fc2_weight_; }
  Tensor<T>& head_output_bias() { return fc2_bias_; }

 private:
  ConvBn<T> make_conv_bn(std::string name, Stage stage, std::size_t in, std::size_t out, std::size_t k,
                         std::size_t stride, std::size_t padding, std::mt19937_64& rng);
  Tensor<T> make_param(std::string name, Stage stage, Tensor<T> value);

  NetworkConfig cfg_;
  ConvBn<T> stem_;
  std::vector<ResidualBlock<T>> blocks_;
  Tensor<T> fc1_weight_, fc1_bias_, fc2_weight_, fc2_bias_;
  std::vector<Parameter<T>> params_;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace snr::model
