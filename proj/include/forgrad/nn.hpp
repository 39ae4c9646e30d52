#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "forgrad/tensor.hpp"

namespace forgrad {

enum class LayerKind : std::uint8_t {
  Conv2D = 0,
  Dense = 1,
  ReLU = 2,
  MaxPool2D = 3,
  AvgPool2D = 4,
  Flatten = 5,
  Softmax = 6,
};

enum class Padding : std::uint8_t { Valid = 0, Same = 1 };

enum class ReluMode { Standard, Guided };

std::string to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  std::uint32_t kernel_size = 1;
  std::uint32_t stride = 1;
  std::uint32_t channels_out = 0;
  Padding padding = Padding::Valid;

  static LayerSpec conv(std::uint32_t kernel, std::uint32_t channels, std::uint32_t stride = 1,
                        Padding padding = Padding::Same);
  static LayerSpec dense(std::uint32_t units);
  static LayerSpec relu();
  static LayerSpec max_pool(std::uint32_t kernel, std::uint32_t stride);
  static LayerSpec avg_pool(std::uint32_t kernel, std::uint32_t stride);
  static LayerSpec flatten();
  static LayerSpec softmax();

  bool has_params() const { return kind == LayerKind::Conv2D || kind == LayerKind::Dense; }
  bool operator==(const LayerSpec&) const = default;
};

/// Output shape of `spec` applied to `input`; throws ValidationError when the
/// layer cannot consume that shape.
Shape layer_output_shape(const LayerSpec& spec, const Shape& input);

/// Immutable layer stack plus parameters. Parameter names follow
/// `layer<i>.weight` / `layer<i>.bias`. Conv weights are (Cout, Cin, k, k),
/// dense weights are (out, in).
class Network {
 public:
  Network(Shape input_shape, std::vector<LayerSpec> layers,
          const std::map<std::string, Tensor>& params);

  /// He-normal weights and zero biases. Each layer draws from its own stream
  /// derived from (seed, layer index) so architectures that differ only in
  /// parameter-free layers get identical parameters.
  static Network initialized(Shape input_shape, std::vector<LayerSpec> layers, std::uint64_t seed);

  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  /// Input shape of layer i; index layers().size() is the final output shape.
  const Shape& activation_shape(std::size_t i) const { return shapes_.at(i); }

  const Tensor& weight(std::size_t layer) const { return weights_.at(layer); }
  const Tensor& bias(std::size_t layer) const { return biases_.at(layer); }
  std::map<std::string, Tensor> params() const;
  /// Indices of Conv2D / Dense layers, input side first.
  std::vector<std::size_t> parameterized_layers() const;
  std::size_t logits_layer_end() const noexcept { return logits_end_; }

  /// Returns a copy with the parameters of `layer` replaced.
  Network with_params(std::size_t layer, Tensor weight, Tensor bias) const;

  std::uint64_t hash() const;

  bool operator==(const Network&) const = default;

 private:
  Network() = default;
  void validate_and_index();

  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
  std::vector<Shape> shapes_;
  std::size_t num_classes_ = 0;
  std::size_t logits_end_ = 0;
};

struct ForwardCache {
  std::vector<Tensor> inputs;                       // input of every layer up to the logits
  std::vector<std::vector<std::uint32_t>> argmax;   // per layer; populated for MaxPool2D only
  Tensor logits;
  Tensor probabilities;
};

ForwardCache forward(const Network& net, const Tensor& x);

/// Logits from an activation fed into layer `from_layer` (0 = network input).
Tensor forward_from(const Network& net, std::size_t from_layer, const Tensor& activation);

/// Stable softmax (max subtraction).
Tensor softmax(const Tensor& logits);

std::size_t argmax_class(const Tensor& scores);

/// d logit[target] / d x.
Tensor backward_input(const Network& net, const ForwardCache& cache, std::size_t target_class,
                      ReluMode mode = ReluMode::Standard);

/// d logit[target] / d (input of layer `stop_layer`).
Tensor backward_to_layer(const Network& net, const ForwardCache& cache, std::size_t target_class,
                         std::size_t stop_layer, ReluMode mode = ReluMode::Standard);

struct ParamGrads {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};

/// Back-propagates an arbitrary logit cotangent to the input, accumulating
/// parameter gradients into `grads` when non-null.
Tensor backward(const Network& net, const ForwardCache& cache, const Tensor& logit_cotangent,
                ReluMode mode, std::size_t stop_layer, ParamGrads* grads);

Tensor max_pool_backward(const Tensor& pool_input, std::span<const std::uint32_t> argmax,
                         const Tensor& upstream);
Tensor avg_pool_backward(const Tensor& upstream, const Shape& input_shape, std::uint32_t kernel,
                         std::uint32_t stride);

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Network net;
  std::vector<double> loss_history;  // mean cross-entropy per epoch
  double train_accuracy = 0.0;
};

TrainResult train(const Network& net, std::span<const Tensor> images,
                  std::span<const std::size_t> labels, const TrainConfig& cfg);

double accuracy(const Network& net, std::span<const Tensor> images,
                std::span<const std::size_t> labels);

/// Resamples the `through_layer` parameterized layers closest to the output.
Network randomize_weights(const Network& net, std::size_t through_layer, std::uint64_t seed);

std::vector<unsigned char> serialize(const Network& net);
Network deserialize(std::span<const unsigned char> bytes);
void save_model(const Network& net, const std::filesystem::path& path);
Network load_model(const std::filesystem::path& path);

/// Named-tensor container sharing the model file encoding (zero layers).
std::vector<unsigned char> serialize_tensors(const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> deserialize_tensors(std::span<const unsigned char> bytes);

/// Named architectures: cnn-max, cnn-avg, cnn-stride1, cnn-stride2,
/// cnn-stride4, linear.
Network make_preset(const std::string& name, std::uint64_t seed, Shape input_shape = {1, 28, 28},
                    std::size_t num_classes = 2);
std::vector<std::string> preset_names();

}  // namespace forgrad
