#include "dmm/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "dmm/kernels.hpp"

namespace dmm {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

struct Spatial {
  std::size_t batch, channels, h, w;
  bool batched;
};

}  // namespace

std::string kind_name(const LayerKind& kind) {
  return std::visit(Overloaded{
                        [](const Conv2d&) { return std::string("Conv2d"); },
                        [](const MaxPool2d&) { return std::string("MaxPool2d"); },
                        [](const Relu&) { return std::string("ReLU"); },
                        [](const FullyConnected&) { return std::string("FullyConnected"); },
                        [](const Flatten&) { return std::string("Flatten"); },
                    },
                    kind);
}

void LayerParams::zero_grad() {
  weight_grad.fill(0.0);
  bias_grad.fill(0.0);
}

Layer::Layer(LayerKind kind, std::string name) : kind_(kind), name_(std::move(name)) {
  if (name_.empty()) name_ = kind_name(kind_);
  std::visit(Overloaded{
                 [&](const Conv2d& c) {
                   if (c.kernel == 0 || c.stride == 0 || c.in_channels == 0 || c.out_channels == 0) {
                     throw std::invalid_argument(name_ + ": conv dimensions must be positive");
                   }
                   Shape ws{c.out_channels, c.in_channels, c.kernel, c.kernel};
                   params_.weights = Tensor(ws);
                   params_.weight_grad = Tensor(ws);
                   params_.bias = Tensor({c.out_channels});
                   params_.bias_grad = Tensor({c.out_channels});
                 },
                 [&](const FullyConnected& f) {
                   if (f.in_dim == 0 || f.out_dim == 0) {
                     throw std::invalid_argument(name_ + ": dense dimensions must be positive");
                   }
                   Shape ws{f.out_dim, f.in_dim};
                   params_.weights = Tensor(ws);
                   params_.weight_grad = Tensor(ws);
                   params_.bias = Tensor({f.out_dim});
                   params_.bias_grad = Tensor({f.out_dim});
                 },
                 [&](const MaxPool2d& p) {
                   if (p.kernel == 0 || p.stride == 0) throw std::invalid_argument(name_ + ": pool dimensions must be positive");
                 },
                 [](const auto&) {},
             },
             kind_);
}

void Layer::shape_error(const std::string& what, const Shape& a, const Shape& b) const {
  throw ShapeError(name_ + " (" + kind_name(kind_) + "): " + what + ": " + to_string(a) + " vs " + to_string(b));
}

Shape Layer::output_shape(const Shape& in) const {
  auto spatial = [&](std::size_t channels) -> Spatial {
    if (in.size() == 3) return {1, in[0], in[1], in[2], false};
    if (in.size() == 4) return {in[0], in[1], in[2], in[3], true};
    shape_error("expected [C,H,W] or [N,C,H,W] input", in, {channels, 0, 0});
  };
  auto make = [](const Spatial& s, std::size_t c, std::size_t h, std::size_t w) {
    return s.batched ? Shape{s.batch, c, h, w} : Shape{c, h, w};
  };
  return std::visit(
      Overloaded{
          [&](const Conv2d& c) {
            Spatial s = spatial(c.in_channels);
            if (s.channels != c.in_channels) shape_error("channel mismatch", in, {c.in_channels, s.h, s.w});
            if (s.h + 2 * c.padding < c.kernel || s.w + 2 * c.padding < c.kernel) {
              shape_error("kernel exceeds padded input", in, {c.kernel, c.kernel});
            }
            return make(s, c.out_channels, (s.h + 2 * c.padding - c.kernel) / c.stride + 1,
                        (s.w + 2 * c.padding - c.kernel) / c.stride + 1);
          },
          [&](const MaxPool2d& p) {
            Spatial s = spatial(0);
            if (s.h < p.kernel || s.w < p.kernel) shape_error("kernel exceeds input", in, {p.kernel, p.kernel});
            return make(s, s.channels, (s.h - p.kernel) / p.stride + 1, (s.w - p.kernel) / p.stride + 1);
          },
          [&](const Relu&) { return in; },
          [&](const FullyConnected& f) {
            if (in.size() == 1 && in[0] == f.in_dim) return Shape{f.out_dim};
            if (in.size() == 2 && in[1] == f.in_dim) return Shape{in[0], f.out_dim};
            shape_error("expected [in_dim] or [N,in_dim]", in, {f.in_dim});
          },
          [&](const Flatten&) {
            if (in.size() == 4) return Shape{in[0], in[1] * in[2] * in[3]};
            return Shape{shape_size(in)};
          },
      },
      kind_);
}

Tensor Layer::forward(const Tensor& input) const {
  Tensor out(output_shape(input.shape()));
  const Shape& in = input.shape();
  std::visit(Overloaded{
                 [&](const Conv2d& c) {
                   bool b = in.size() == 4;
                   kernels::ConvGeometry g{b ? in[0] : 1, c.in_channels, in[b + 1], in[b + 2], c.out_channels,
                                           c.kernel, c.stride, c.padding};
                   kernels::conv2d_forward(g, input.data(), params_.weights.data(), params_.bias.data(), out.data());
                 },
                 [&](const MaxPool2d& p) {
                   bool b = in.size() == 4;
                   kernels::PoolGeometry g{b ? in[0] : 1, in[b], in[b + 1], in[b + 2], p.kernel, p.stride};
                   kernels::maxpool_forward(g, input.data(), out.data());
                 },
                 [&](const Relu&) {
                   for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
                 },
                 [&](const FullyConnected& f) {
                   kernels::DenseGeometry g{in.size() == 2 ? in[0] : 1, f.in_dim, f.out_dim};
                   kernels::dense_forward(g, input.data(), params_.weights.data(), params_.bias.data(), out.data());
                 },
                 [&](const Flatten&) { out.values() = input.values(); },
             },
             kind_);
  return out;
}

Tensor Layer::backward(const Tensor& input, const Tensor& upstream, bool need_input_grad) {
  const Shape expected = output_shape(input.shape());
  if (upstream.shape() != expected) shape_error("upstream gradient does not match output", upstream.shape(), expected);
  const Shape& in = input.shape();
  Tensor in_grad(in);
  std::span<double> ig = need_input_grad ? in_grad.data() : std::span<double>{};
  std::visit(Overloaded{
                 [&](const Conv2d& c) {
                   bool b = in.size() == 4;
                   kernels::ConvGeometry g{b ? in[0] : 1, c.in_channels, in[b + 1], in[b + 2], c.out_channels,
                                           c.kernel, c.stride, c.padding};
                   kernels::conv2d_backward(g, input.data(), params_.weights.data(), upstream.data(), ig,
                                            params_.weight_grad.data(), params_.bias_grad.data());
                 },
                 [&](const MaxPool2d& p) {
                   bool b = in.size() == 4;
                   kernels::PoolGeometry g{b ? in[0] : 1, in[b], in[b + 1], in[b + 2], p.kernel, p.stride};
                   kernels::maxpool_backward(g, input.data(), upstream.data(), in_grad.data());
                 },
                 [&](const Relu&) {
                   for (std::size_t i = 0; i < input.size(); ++i) in_grad[i] = input[i] > 0.0 ? upstream[i] : 0.0;
                 },
                 [&](const FullyConnected& f) {
                   kernels::DenseGeometry g{in.size() == 2 ? in[0] : 1, f.in_dim, f.out_dim};
                   kernels::dense_backward(g, input.data(), params_.weights.data(), upstream.data(), ig,
                                           params_.weight_grad.data(), params_.bias_grad.data());
                 },
                 [&](const Flatten&) { in_grad.values() = upstream.values(); },
             },
             kind_);
  return in_grad;
}

void Layer::initialize(std::mt19937_64& rng) {
  if (!params_.has_parameters()) return;
  std::size_t fan_in = 0, fan_out = 0;
  if (const auto* c = std::get_if<Conv2d>(&kind_)) {
    fan_in = c->in_channels * c->kernel * c->kernel;
    fan_out = c->out_channels * c->kernel * c->kernel;
  } else if (const auto* f = std::get_if<FullyConnected>(&kind_)) {
    fan_in = f->in_dim;
    fan_out = f->out_dim;
  }
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (double& w : params_.weights.values()) w = dist(rng);
  params_.bias.fill(0.0);
  params_.zero_grad();
}

void sgd_step(LayerParams& p, const SgdOptions& options) {
  if (!p.has_parameters()) return;
  auto step = [&](Tensor& value, Tensor& grad, Tensor& velocity) {
    if (options.momentum == 0.0) {
      for (std::size_t i = 0; i < value.size(); ++i) value[i] -= options.learning_rate * grad[i];
    } else {
      if (velocity.shape() != value.shape()) velocity = Tensor(value.shape());
      for (std::size_t i = 0; i < value.size(); ++i) {
        velocity[i] = options.momentum * velocity[i] + grad[i];
        value[i] -= options.learning_rate * velocity[i];
      }
    }
    grad.fill(0.0);
  };
  step(p.weights, p.weight_grad, p.weight_velocity);
  step(p.bias, p.bias_grad, p.bias_velocity);
}

}  // namespace dmm
