#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "dmm/tensor.hpp"

namespace dmm {

struct Conv2d {
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t kernel;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct MaxPool2d {
  std::size_t kernel;
  std::size_t stride;
};

struct Relu {};

struct FullyConnected {
  std::size_t in_dim;
  std::size_t out_dim;
};

/// [N,C,H,W] -> [N,C*H*W]; an unbatched [C,H,W] becomes [C*H*W].
struct Flatten {};

using LayerKind = std::variant<Conv2d, MaxPool2d, Relu, FullyConnected, Flatten>;

std::string kind_name(const LayerKind& kind);

/// Trainable state of one layer. Parameter-free layers keep all tensors empty.
struct LayerParams {
  Tensor weights;
  Tensor bias;
  Tensor weight_grad;
  Tensor bias_grad;
  Tensor weight_velocity;
  Tensor bias_velocity;

  bool has_parameters() const { return !weights.empty(); }
  void zero_grad();
};

/// A single layer: kind, parameters and gradient accumulators.
///
/// Convolution and pooling take [C,H,W] or [N,C,H,W]; fully connected takes
/// [D] or [N,D]. Conv weights are [out,in,k,k], FC weights are [out,in].
class Layer {
 public:
  explicit Layer(LayerKind kind, std::string name = {});

  const LayerKind& kind() const { return kind_; }
  const std::string& name() const { return name_; }
  LayerParams& params() { return params_; }
  const LayerParams& params() const { return params_; }

  Shape output_shape(const Shape& input) const;
  Tensor forward(const Tensor& input) const;

  /// Returns the input gradient and adds parameter gradients into the
  /// accumulators. Pass `need_input_grad = false` on the first layer of a
  /// network to skip computing a gradient nobody reads.
  Tensor backward(const Tensor& input, const Tensor& upstream, bool need_input_grad = true);

  /// Glorot-uniform weights, zero biases.
  void initialize(std::mt19937_64& rng);

 private:
  [[noreturn]] void shape_error(const std::string& what, const Shape& a, const Shape& b) const;

  LayerKind kind_;
  std::string name_;
  LayerParams params_;
};

struct SgdOptions {
  double learning_rate = 0.001;
  double momentum = 0.0;
};

/// p <- p - lr * v with v <- momentum * v + g (v = g when momentum is 0),
/// then zeroes the gradient accumulators.
void sgd_step(LayerParams& params, const SgdOptions& options);

}  // namespace dmm
