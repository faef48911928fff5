#include "snr/model/network.hpp"

#include <algorithm>
#include <cmath>

namespace snr::model {

std::string_view to_string(BlockKind kind) {
  return kind == BlockKind::kBasic ? "basic" : "bottleneck";
}

BlockKind block_kind_from_string(std::string_view name) {
  if (name == "basic") return BlockKind::kBasic;
  if (name == "bottleneck") return BlockKind::kBottleneck;
  throw ConfigError("unknown block kind '" + std::string(name) + "' (expected basic or bottleneck)");
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::kStem: return "stem";
    case Stage::kStage1: return "stage1";
    case Stage::kStage2: return "stage2";
    case Stage::kStage3: return "stage3";
    case Stage::kStage4: return "stage4";
    case Stage::kHead: return "head";
  }
  return "unknown";
}

Stage stage_from_string(std::string_view name) {
  for (Stage s : all_stages()) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown stage name '" + std::string(name) +
                    "' (expected stem, stage1, stage2, stage3, stage4 or head)");
}

std::set<Stage> all_stages() {
  return {Stage::kStem, Stage::kStage1, Stage::kStage2, Stage::kStage3, Stage::kStage4, Stage::kHead};
}

void NetworkConfig::validate() const {
  if (input_channels <= 0) throw ConfigError("input_channels must be positive");
  if (input_size <= 1) throw ConfigError("input_size must be at least 2");
  for (int i = 0; i < 4; ++i) {
    if (stage_depths[i] <= 0) throw ConfigError("stage depths must be positive");
    if (stage_widths[i] <= 0) throw ConfigError("stage widths must be positive");
  }
  if (dense_units <= 0) throw ConfigError("dense_units must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
  if (!(bn_epsilon > 0.0)) throw ConfigError("batch-norm epsilon must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) throw ConfigError("batch-norm momentum must lie in [0, 1]");
  // Stem conv, stem pool, stage2, stage3 and stage4 each halve the grid; a
  // grid of 1 stays 1.
  int size = input_size;
  for (int step = 0; step < 5; ++step) {
    if (size == 1) break;
    if (size % 2 != 0) {
      throw ConfigError("input_size " + std::to_string(input_size) +
                        " does not reduce evenly through the network strides (odd grid " + std::to_string(size) +
                        " at reduction " + std::to_string(step + 1) + ")");
    }
    size /= 2;
  }
}

int NetworkConfig::feature_channels() const {
  return block_kind == BlockKind::kBottleneck ? 4 * stage_widths[3] : stage_widths[3];
}

NetworkConfig tiny_config(int input_size, std::array<int, 4> widths, int dense_units) {
  NetworkConfig cfg;
  cfg.input_size = input_size;
  cfg.block_kind = BlockKind::kBasic;
  cfg.stage_depths = {1, 1, 1, 1};
  cfg.stage_widths = widths;
  cfg.dense_units = dense_units;
  return cfg;
}

namespace {

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, double gain, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(fan_in)));
  std::vector<T> values(numel(shape));
  for (T& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(values));
}

// stage1.block1.conv2 -> stage1.block1.bn2, stem.conv -> stem.bn, *.proj -> *.proj_bn
std::string batch_norm_name(const std::string& conv_name) {
  const auto dot = conv_name.rfind('.');
  const std::string leaf = conv_name.substr(dot + 1);
  const std::string bn_leaf = leaf.rfind("conv", 0) == 0 ? "bn" + leaf.substr(4) : leaf + "_bn";
  return conv_name.substr(0, dot + 1) + bn_leaf;
}

template <typename T>
void maybe_capture(const std::string& name, Tensor<T>& activation, ForwardContext<T>& ctx, Tensor<T>* captured) {
  if (captured == nullptr || ctx.capture.empty() || ctx.capture != name) return;
  if (ctx.capture_as_leaf && !activation.requires_grad()) activation.set_requires_grad(true);
  *captured = activation;
}

template <typename T>
Tensor<T> apply_batch_norm(const Tensor<T>& x, BatchNormState<T>& bn, const ForwardContext<T>& ctx) {
  ops::BatchNormOptions opts;
  opts.use_batch_stats = ctx.mode == Mode::kTrain && !bn.frozen;
  opts.update_running = opts.use_batch_stats;
  opts.momentum = bn.momentum;
  opts.epsilon = bn.epsilon;
  return ops::batch_norm(x, bn.scale, bn.shift, bn.running_mean, bn.running_var, opts, ctx.tape);
}

template <typename T>
Tensor<T> conv_bn(const Tensor<T>& x, ConvBn<T>& layer, ForwardContext<T>& ctx, Tensor<T>* captured) {
  Tensor<T> y = ops::conv2d(x, layer.weight, static_cast<const Tensor<T>*>(nullptr),
                            ops::Conv2dParams{layer.stride, layer.padding}, ctx.tape);
  maybe_capture(layer.name, y, ctx, captured);
  return apply_batch_norm(y, layer.bn, ctx);
}

}  // namespace

template <typename T>
Tensor<T> residual_block_forward(const Tensor<T>& x, ResidualBlock<T>& block, ForwardContext<T>& ctx,
                                 Tensor<T>* captured) {
  if (x.rank() != 4 || x.dim(1) != block.in_channels) {
    throw ShapeError(block.name + " expects " + std::to_string(block.in_channels) + " input channels, got " +
                     shape_to_string(x.shape()));
  }
  if (!block.projection && block.in_channels != block.out_channels) {
    throw ShapeError(block.name + " has an identity shortcut but maps " + std::to_string(block.in_channels) +
                     " channels to " + std::to_string(block.out_channels));
  }
  Tensor<T> h = x;
  for (std::size_t i = 0; i < block.branch.size(); ++i) {
    h = conv_bn(h, block.branch[i], ctx, captured);
    if (i + 1 < block.branch.size()) h = ops::relu(h, ctx.tape);
  }
  Tensor<T> shortcut = block.projection ? conv_bn(x, *block.projection, ctx, captured) : x;
  if (shortcut.shape() != h.shape()) {
    throw ShapeError(block.name + " residual branch " + shape_to_string(h.shape()) + " does not match shortcut " +
                     shape_to_string(shortcut.shape()));
  }
  Tensor<T> out = ops::relu(ops::add(h, shortcut, ctx.tape), ctx.tape);
  maybe_capture(block.name, out, ctx, captured);
  return out;
}

template <typename T>
Tensor<T> Network<T>::make_param(std::string name, Stage stage, Tensor<T> value) {
  params_.push_back(Parameter<T>{std::move(name), value, stage, true});
  return value;
}

template <typename T>
ConvBn<T> Network<T>::make_conv_bn(std::string name, Stage stage, std::size_t in, std::size_t out, std::size_t k,
                                   std::size_t stride, std::size_t padding, std::mt19937_64& rng) {
  ConvBn<T> layer;
  layer.stride = stride;
  layer.padding = padding;
  layer.weight = make_param(name + ".weight", stage, he_normal<T>(Shape{out, in, k, k}, in * k * k, 2.0, rng));
  const std::string bn_name = batch_norm_name(name);
  layer.bn.scale = make_param(bn_name + ".gamma", stage, Tensor<T>::full(Shape{out}, T(1)));
  layer.bn.shift = make_param(bn_name + ".beta", stage, Tensor<T>::zeros(Shape{out}));
  layer.bn.running_mean = Tensor<T>::zeros(Shape{out});
  layer.bn.running_var = Tensor<T>::full(Shape{out}, T(1));
  layer.bn.momentum = cfg_.bn_momentum;
  layer.bn.epsilon = cfg_.bn_epsilon;
  layer.name = std::move(name);
  return layer;
}

template <typename T>
Network<T>::Network(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const std::size_t in_ch = static_cast<std::size_t>(cfg_.input_channels);
  const std::size_t stem_width = static_cast<std::size_t>(cfg_.stage_widths[0]);
  stem_ = make_conv_bn("stem.conv", Stage::kStem, in_ch, stem_width, 7, 2, 3, rng);

  const bool bottleneck = cfg_.block_kind == BlockKind::kBottleneck;
  const Stage stages[4] = {Stage::kStage1, Stage::kStage2, Stage::kStage3, Stage::kStage4};
  std::size_t channels = stem_width;
  for (int s = 0; s < 4; ++s) {
    const std::size_t width = static_cast<std::size_t>(cfg_.stage_widths[s]);
    const std::size_t out = bottleneck ? 4 * width : width;
    for (int b = 0; b < cfg_.stage_depths[s]; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      ResidualBlock<T> block;
      block.name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
      block.stage = stages[s];
      block.in_channels = channels;
      block.out_channels = out;
      if (bottleneck) {
        block.branch.push_back(make_conv_bn(block.name + ".conv1", stages[s], channels, width, 1, 1, 0, rng));
        block.branch.push_back(make_conv_bn(block.name + ".conv2", stages[s], width, width, 3, stride, 1, rng));
        block.branch.push_back(make_conv_bn(block.name + ".conv3", stages[s], width, out, 1, 1, 0, rng));
      } else {
        block.branch.push_back(make_conv_bn(block.name + ".conv1", stages[s], channels, width, 3, stride, 1, rng));
        block.branch.push_back(make_conv_bn(block.name + ".conv2", stages[s], width, width, 3, 1, 1, rng));
      }
      if (stride != 1 || channels != out) {
        block.projection = make_conv_bn(block.name + ".proj", stages[s], channels, out, 1, stride, 0, rng);
      }
      blocks_.push_back(std::move(block));
      channels = out;
    }
  }

  const std::size_t units = static_cast<std::size_t>(cfg_.dense_units);
  fc1_weight_ = make_param("head.fc1.weight", Stage::kHead, he_normal<T>(Shape{channels, units}, channels, 2.0, rng));
  fc1_bias_ = make_param("head.fc1.bias", Stage::kHead, Tensor<T>::zeros(Shape{units}));
  fc2_weight_ = make_param("head.fc2.weight", Stage::kHead, he_normal<T>(Shape{units, 1}, units, 1.0, rng));
  fc2_bias_ = make_param("head.fc2.bias", Stage::kHead, Tensor<T>::zeros(Shape{1}));

  set_frozen(cfg_.frozen_stages);
}

template <typename T>
Parameter<T>& Network<T>::parameter(std::string_view name) {
  for (Parameter<T>& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
void Network<T>::set_frozen(const std::set<Stage>& stages) {
  cfg_.frozen_stages = stages;
  for (Parameter<T>& p : params_) {
    p.trainable = !stages.contains(p.stage);
    p.value.set_requires_grad(p.trainable);
    if (!p.trainable) p.value.drop_grad();
  }
  stem_.bn.frozen = stages.contains(Stage::kStem);
  for (ResidualBlock<T>& block : blocks_) {
    const bool frozen = stages.contains(block.stage);
    for (ConvBn<T>& layer : block.branch) layer.bn.frozen = frozen;
    if (block.projection) block.projection->bn.frozen = frozen;
  }
}

template <typename T>
void Network<T>::set_frozen(const std::vector<std::string>& stage_names) {
  std::set<Stage> stages;
  for (const std::string& n : stage_names) stages.insert(stage_from_string(n));
  set_frozen(stages);
}

template <typename T>
ForwardResult<T> Network<T>::forward(const Tensor<T>& input, Mode mode) {
  ForwardContext<T> ctx;
  ctx.mode = mode;
  return forward(input, ctx);
}

template <typename T>
ForwardResult<T> Network<T>::forward(const Tensor<T>& input, ForwardContext<T>& ctx) {
  const std::size_t size = static_cast<std::size_t>(cfg_.input_size);
  if (input.rank() != 4 || input.dim(1) != static_cast<std::size_t>(cfg_.input_channels) || input.dim(2) != size ||
      input.dim(3) != size) {
    throw ShapeError("network expects N×" + std::to_string(cfg_.input_channels) + "×" + std::to_string(size) + "×" +
                     std::to_string(size) + " input, got " + shape_to_string(input.shape()));
  }
  if (ctx.mode == Mode::kTrain && cfg_.dropout_rate > 0.0 && ctx.dropout_rng == nullptr) {
    throw ConfigError("train-mode forward needs a dropout random engine");
  }
  ForwardResult<T> result;
  Tensor<T>* cap = &result.captured;

  Tensor<T> h = conv_bn(input, stem_, ctx, cap);
  h = ops::relu(h, ctx.tape);
  h = ops::max_pool2d(h, 3, 2, 1, ctx.tape);
  maybe_capture(std::string("stem"), h, ctx, cap);

  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    h = residual_block_forward(h, blocks_[i], ctx, cap);
    const bool stage_end = i + 1 == blocks_.size() || blocks_[i + 1].stage != blocks_[i].stage;
    if (stage_end) maybe_capture(std::string(to_string(blocks_[i].stage)), h, ctx, cap);
  }

  h = ops::global_avg_pool(h, ctx.tape);
  h = ops::reshape(h, Shape{h.dim(0), h.dim(1)}, ctx.tape);
  h = ops::relu(ops::dense(h, fc1_weight_, fc1_bias_, ctx.tape), ctx.tape);
  maybe_capture(std::string("head.fc1"), h, ctx, cap);
  if (ctx.mode == Mode::kTrain && cfg_.dropout_rate > 0.0) {
    h = ops::dropout(h, cfg_.dropout_rate, *ctx.dropout_rng, ctx.tape);
  }
  result.logits = ops::dense(h, fc2_weight_, fc2_bias_, ctx.tape);
  result.probabilities = ops::sigmoid(result.logits, ctx.tape);
  return result;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Network<T>::state() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (const Parameter<T>& p : params_) out.emplace_back(p.name, p.value);
  auto add_stats = [&out](const ConvBn<T>& layer) {
    const std::string bn = batch_norm_name(layer.name);
    out.emplace_back(bn + ".running_mean", layer.bn.running_mean);
    out.emplace_back(bn + ".running_var", layer.bn.running_var);
  };
  add_stats(stem_);
  for (const ResidualBlock<T>& block : blocks_) {
    for (const ConvBn<T>& layer : block.branch) add_stats(layer);
    if (block.projection) add_stats(*block.projection);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> Network<T>::snapshot() const {
  std::vector<Tensor<T>> out;
  for (const auto& [name, t] : state()) out.push_back(t.clone());
  return out;
}

template <typename T>
void Network<T>::restore(const std::vector<Tensor<T>>& snapshot) {
  auto current = state();
  if (snapshot.size() != current.size()) throw ConfigError("snapshot does not match network layout");
  for (std::size_t i = 0; i < current.size(); ++i) {
    Tensor<T> dst = current[i].second;
    if (dst.shape() != snapshot[i].shape()) throw ShapeError("snapshot shape mismatch for " + current[i].first);
    auto src = snapshot[i].data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

template <typename T>
std::vector<std::string> Network<T>::activation_names() const {
  std::vector<std::string> names{stem_.name, "stem"};
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const ResidualBlock<T>& block = blocks_[i];
    for (const ConvBn<T>& layer : block.branch) names.push_back(layer.name);
    if (block.projection) names.push_back(block.projection->name);
    names.push_back(block.name);
    if (i + 1 == blocks_.size() || blocks_[i + 1].stage != block.stage) {
      names.emplace_back(to_string(block.stage));
    }
  }
  names.emplace_back("head.fc1");
  return names;
}

template <typename T>
std::string Network<T>::last_conv_name() const {
  return blocks_.back().branch.back().name;
}

template class Network<float>;
template class Network<double>;

template Tensor<float> residual_block_forward(const Tensor<float>&, ResidualBlock<float>&, ForwardContext<float>&,
                                              Tensor<float>*);
template Tensor<double> residual_block_forward(const Tensor<double>&, ResidualBlock<double>&, ForwardContext<double>&,
                                               Tensor<double>*);

}  // namespace snr::model
