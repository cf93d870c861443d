#pragma once

// Dense compute kernels for the layers in layers.hpp.
//
// Two implementations share one signature: `serial` is the reference, `omp`
// distributes independent output planes over OpenMP threads. Every output
// element is reduced in the same order by both, so results are bit-identical
// regardless of thread count. The free functions at the bottom dispatch on the
// process-wide backend.

#include <cstddef>
#include <span>

namespace dmm::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (in_h + 2 * padding - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * padding - kernel) / stride + 1; }
};

struct PoolGeometry {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t kernel = 2;
  std::size_t stride = 2;

  std::size_t out_h() const { return (in_h - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w - kernel) / stride + 1; }
};

struct DenseGeometry {
  std::size_t batch = 1;
  std::size_t in_dim = 1;
  std::size_t out_dim = 1;
};

enum class Backend { serial, openmp };

/// True when the library was compiled with OpenMP. Without it the `omp`
/// kernels run the serial loops.
bool openmp_available();
void set_backend(Backend backend);
Backend backend();

// Forward kernels overwrite `out`. Backward kernels overwrite `in_grad` and
// accumulate into parameter gradients.
#define DMM_KERNEL_DECLS                                                                                      \
  void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weights,     \
                      std::span<const double> bias, std::span<double> out);                                  \
  void conv2d_backward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weights,    \
                       std::span<const double> upstream, std::span<double> in_grad,                          \
                       std::span<double> weight_grad, std::span<double> bias_grad);                          \
  void maxpool_forward(const PoolGeometry& g, std::span<const double> in, std::span<double> out);           \
  void maxpool_backward(const PoolGeometry& g, std::span<const double> in, std::span<const double> upstream, \
                        std::span<double> in_grad);                                                          \
  void dense_forward(const DenseGeometry& g, std::span<const double> in, std::span<const double> weights,    \
                     std::span<const double> bias, std::span<double> out);                                   \
  void dense_backward(const DenseGeometry& g, std::span<const double> in, std::span<const double> weights,    \
                      std::span<const double> upstream, std::span<double> in_grad,                           \
                      std::span<double> weight_grad, std::span<double> bias_grad);

namespace serial {
DMM_KERNEL_DECLS
}
namespace omp {
DMM_KERNEL_DECLS
}
DMM_KERNEL_DECLS

#undef DMM_KERNEL_DECLS

}  // namespace dmm::kernels
