#include "dmm/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <vector>

#ifdef DMM_HAVE_OPENMP
#include <omp.h>
#endif

namespace dmm::kernels {
namespace {

using Index = std::ptrdiff_t;

std::atomic<Backend> g_backend{Backend::serial};

// Output positions o in [lo, hi) for which o*stride + offset - padding lies in [0, extent).
struct ValidRange {
  Index lo;
  Index hi;
};

ValidRange valid_outputs(Index out_extent, Index in_extent, Index stride, Index offset, Index padding) {
  Index shift = padding - offset;  // need o*stride >= shift
  Index lo = shift > 0 ? (shift + stride - 1) / stride : 0;
  Index last = in_extent - 1 + padding - offset;  // need o*stride <= last
  Index hi = last < 0 ? 0 : last / stride + 1;
  return {std::min(lo, out_extent), std::min(hi, out_extent)};
}

// ---- per-plane bodies shared by both backends ----

// Patch matrix of sample n: row r = (ic*k + ky)*k + kx, column = oy*ow + ox.
// Padding positions hold 0.
std::size_t patch_rows(const ConvGeometry& g) { return g.in_channels * g.kernel * g.kernel; }
std::size_t patch_cols(const ConvGeometry& g) { return g.out_h() * g.out_w(); }

void im2col_sample(const ConvGeometry& g, std::size_t n, std::span<const double> in, std::span<double> cols) {
  const Index oh_n = g.out_h(), ow_n = g.out_w(), s = g.stride, p = g.padding, k = g.kernel;
  const Index ih_n = g.in_h, iw_n = g.in_w, pc = oh_n * ow_n;
  double* dst = cols.data() + n * patch_rows(g) * pc;
  std::fill(dst, dst + patch_rows(g) * pc, 0.0);
  for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
    const double* src = in.data() + (n * g.in_channels + ic) * ih_n * iw_n;
    for (Index ky = 0; ky < k; ++ky) {
      const auto rows = valid_outputs(oh_n, ih_n, s, ky, p);
      for (Index kx = 0; kx < k; ++kx) {
        const auto cs = valid_outputs(ow_n, iw_n, s, kx, p);
        double* row = dst + ((ic * k + ky) * k + kx) * pc;
        for (Index oy = rows.lo; oy < rows.hi; ++oy) {
          const Index base = (oy * s + ky - p) * iw_n + (kx - p);
          for (Index ox = cs.lo; ox < cs.hi; ++ox) row[oy * ow_n + ox] = src[base + ox * s];
        }
      }
    }
  }
}

void conv_forward_plane(const ConvGeometry& g, std::size_t n, std::size_t oc, std::span<const double> cols,
                        std::span<const double> w, std::span<const double> b, std::span<double> out) {
  const std::size_t rn = patch_rows(g), pc = patch_cols(g);
  const double* col = cols.data() + n * rn * pc;
  const double* wr = w.data() + oc * rn;
  double* dst = out.data() + (n * g.out_channels + oc) * pc;
  std::fill(dst, dst + pc, b[oc]);
  for (std::size_t r = 0; r < rn; ++r) {
    const double wv = wr[r];
    const double* c = col + r * pc;
    for (std::size_t i = 0; i < pc; ++i) dst[i] += wv * c[i];
  }
}

// Weight and bias gradient for one output channel, summed over the batch in order.
void conv_param_grad_channel(const ConvGeometry& g, std::size_t oc, std::span<const double> cols,
                             std::span<const double> up, std::span<double> wg, std::span<double> bg) {
  const std::size_t rn = patch_rows(g), pc = patch_cols(g);
  double* wr = wg.data() + oc * rn;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* u = up.data() + (n * g.out_channels + oc) * pc;
    const double* col = cols.data() + n * rn * pc;
    double bsum = 0.0;
    for (std::size_t i = 0; i < pc; ++i) bsum += u[i];
    bg[oc] += bsum;
    for (std::size_t r = 0; r < rn; ++r) {
      const double* c = col + r * pc;
      double acc = 0.0;
      for (std::size_t i = 0; i < pc; ++i) acc += u[i] * c[i];
      wr[r] += acc;
    }
  }
}

// Input gradient of sample n: patch gradient W^T * up, then scattered back.
void conv_input_grad_sample(const ConvGeometry& g, std::size_t n, std::span<const double> w,
                            std::span<const double> up, std::span<double> in_grad) {
  const Index oh_n = g.out_h(), ow_n = g.out_w(), s = g.stride, p = g.padding, k = g.kernel;
  const Index ih_n = g.in_h, iw_n = g.in_w;
  const std::size_t rn = patch_rows(g), pc = patch_cols(g);
  std::vector<double> cg(rn * pc, 0.0);
  for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
    const double* u = up.data() + (n * g.out_channels + oc) * pc;
    const double* wr = w.data() + oc * rn;
    for (std::size_t r = 0; r < rn; ++r) {
      const double wv = wr[r];
      double* c = cg.data() + r * pc;
      for (std::size_t i = 0; i < pc; ++i) c[i] += wv * u[i];
    }
  }
  double* dst = in_grad.data() + n * g.in_channels * ih_n * iw_n;
  std::fill(dst, dst + g.in_channels * ih_n * iw_n, 0.0);
  for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
    double* plane = dst + ic * ih_n * iw_n;
    for (Index ky = 0; ky < k; ++ky) {
      const auto rows = valid_outputs(oh_n, ih_n, s, ky, p);
      for (Index kx = 0; kx < k; ++kx) {
        const auto cs = valid_outputs(ow_n, iw_n, s, kx, p);
        const double* c = cg.data() + ((ic * k + ky) * k + kx) * pc;
        for (Index oy = rows.lo; oy < rows.hi; ++oy) {
          const Index base = (oy * s + ky - p) * iw_n + (kx - p);
          for (Index ox = cs.lo; ox < cs.hi; ++ox) plane[base + ox * s] += c[oy * ow_n + ox];
        }
      }
    }
  }
}

// Ties resolve to the first element in row-major scan order.
std::size_t window_argmax(const PoolGeometry& g, const double* plane, std::size_t oy, std::size_t ox) {
  std::size_t best = oy * g.stride * g.in_w + ox * g.stride;
  for (std::size_t ky = 0; ky < g.kernel; ++ky) {
    for (std::size_t kx = 0; kx < g.kernel; ++kx) {
      std::size_t idx = (oy * g.stride + ky) * g.in_w + ox * g.stride + kx;
      if (plane[idx] > plane[best]) best = idx;
    }
  }
  return best;
}

void pool_forward_plane(const PoolGeometry& g, std::size_t plane, std::span<const double> in, std::span<double> out) {
  const double* src = in.data() + plane * g.in_h * g.in_w;
  double* dst = out.data() + plane * g.out_h() * g.out_w();
  for (std::size_t oy = 0; oy < g.out_h(); ++oy) {
    for (std::size_t ox = 0; ox < g.out_w(); ++ox) dst[oy * g.out_w() + ox] = src[window_argmax(g, src, oy, ox)];
  }
}

void pool_backward_plane(const PoolGeometry& g, std::size_t plane, std::span<const double> in,
                         std::span<const double> up, std::span<double> in_grad) {
  const double* src = in.data() + plane * g.in_h * g.in_w;
  const double* u = up.data() + plane * g.out_h() * g.out_w();
  double* dst = in_grad.data() + plane * g.in_h * g.in_w;
  std::fill(dst, dst + g.in_h * g.in_w, 0.0);
  for (std::size_t oy = 0; oy < g.out_h(); ++oy) {
    for (std::size_t ox = 0; ox < g.out_w(); ++ox) dst[window_argmax(g, src, oy, ox)] += u[oy * g.out_w() + ox];
  }
}

void dense_forward_row(const DenseGeometry& g, std::size_t n, std::span<const double> in, std::span<const double> w,
                       std::span<const double> b, std::span<double> out) {
  const double* x = in.data() + n * g.in_dim;
  for (std::size_t o = 0; o < g.out_dim; ++o) {
    const double* wr = w.data() + o * g.in_dim;
    double acc = 0.0;
    for (std::size_t i = 0; i < g.in_dim; ++i) acc += wr[i] * x[i];
    out[n * g.out_dim + o] = b[o] + acc;
  }
}

void dense_param_grad_row(const DenseGeometry& g, std::size_t o, std::span<const double> in,
                          std::span<const double> up, std::span<double> wg, std::span<double> bg) {
  double* wr = wg.data() + o * g.in_dim;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double u = up[n * g.out_dim + o];
    bg[o] += u;
    const double* x = in.data() + n * g.in_dim;
    for (std::size_t i = 0; i < g.in_dim; ++i) wr[i] += u * x[i];
  }
}

void dense_input_grad_row(const DenseGeometry& g, std::size_t n, std::span<const double> w,
                          std::span<const double> up, std::span<double> in_grad) {
  double* dst = in_grad.data() + n * g.in_dim;
  std::fill(dst, dst + g.in_dim, 0.0);
  for (std::size_t o = 0; o < g.out_dim; ++o) {
    const double u = up[n * g.out_dim + o];
    const double* wr = w.data() + o * g.in_dim;
    for (std::size_t i = 0; i < g.in_dim; ++i) dst[i] += u * wr[i];
  }
}

}  // namespace

bool openmp_available() {
#ifdef DMM_HAVE_OPENMP
  return true;
#else
  return false;
#endif
}

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

// ---- serial reference ----

namespace serial {

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<const double> b, std::span<double> out) {
  std::vector<double> cols(g.batch * patch_rows(g) * patch_cols(g));
  for (std::size_t n = 0; n < g.batch; ++n) im2col_sample(g, n, in, cols);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t oc = 0; oc < g.out_channels; ++oc) conv_forward_plane(g, n, oc, cols, w, b, out);
}

void conv2d_backward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                     std::span<const double> up, std::span<double> in_grad, std::span<double> wg,
                     std::span<double> bg) {
  std::vector<double> cols(g.batch * patch_rows(g) * patch_cols(g));
  for (std::size_t n = 0; n < g.batch; ++n) im2col_sample(g, n, in, cols);
  for (std::size_t oc = 0; oc < g.out_channels; ++oc) conv_param_grad_channel(g, oc, cols, up, wg, bg);
  if (in_grad.empty()) return;
  for (std::size_t n = 0; n < g.batch; ++n) conv_input_grad_sample(g, n, w, up, in_grad);
}

void maxpool_forward(const PoolGeometry& g, std::span<const double> in, std::span<double> out) {
  for (std::size_t p = 0; p < g.batch * g.channels; ++p) pool_forward_plane(g, p, in, out);
}

void maxpool_backward(const PoolGeometry& g, std::span<const double> in, std::span<const double> up,
                      std::span<double> in_grad) {
  for (std::size_t p = 0; p < g.batch * g.channels; ++p) pool_backward_plane(g, p, in, up, in_grad);
}

void dense_forward(const DenseGeometry& g, std::span<const double> in, std::span<const double> w,
                   std::span<const double> b, std::span<double> out) {
  for (std::size_t n = 0; n < g.batch; ++n) dense_forward_row(g, n, in, w, b, out);
}

void dense_backward(const DenseGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<const double> up, std::span<double> in_grad, std::span<double> wg,
                    std::span<double> bg) {
  for (std::size_t o = 0; o < g.out_dim; ++o) dense_param_grad_row(g, o, in, up, wg, bg);
  if (in_grad.empty()) return;
  for (std::size_t n = 0; n < g.batch; ++n) dense_input_grad_row(g, n, w, up, in_grad);
}

}  // namespace serial

// ---- OpenMP ----

namespace omp {

#ifdef DMM_HAVE_OPENMP
#define DMM_PARALLEL_FOR _Pragma("omp parallel for schedule(static)")
#else
#define DMM_PARALLEL_FOR
#endif

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<const double> b, std::span<double> out) {
  std::vector<double> cols(g.batch * patch_rows(g) * patch_cols(g));
  const Index batch = g.batch;
  DMM_PARALLEL_FOR
  for (Index n = 0; n < batch; ++n) im2col_sample(g, n, in, cols);
  const Index planes = g.batch * g.out_channels;
  DMM_PARALLEL_FOR
  for (Index p = 0; p < planes; ++p) conv_forward_plane(g, p / g.out_channels, p % g.out_channels, cols, w, b, out);
}

void conv2d_backward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                     std::span<const double> up, std::span<double> in_grad, std::span<double> wg,
                     std::span<double> bg) {
  std::vector<double> cols(g.batch * patch_rows(g) * patch_cols(g));
  const Index batch = g.batch;
  DMM_PARALLEL_FOR
  for (Index n = 0; n < batch; ++n) im2col_sample(g, n, in, cols);
  const Index channels = g.out_channels;
  DMM_PARALLEL_FOR
  for (Index oc = 0; oc < channels; ++oc) conv_param_grad_channel(g, oc, cols, up, wg, bg);
  if (in_grad.empty()) return;
  DMM_PARALLEL_FOR
  for (Index n = 0; n < batch; ++n) conv_input_grad_sample(g, n, w, up, in_grad);
}

void maxpool_forward(const PoolGeometry& g, std::span<const double> in, std::span<double> out) {
  const Index planes = g.batch * g.channels;
  DMM_PARALLEL_FOR
  for (Index p = 0; p < planes; ++p) pool_forward_plane(g, p, in, out);
}

void maxpool_backward(const PoolGeometry& g, std::span<const double> in, std::span<const double> up,
                      std::span<double> in_grad) {
  const Index planes = g.batch * g.channels;
  DMM_PARALLEL_FOR
  for (Index p = 0; p < planes; ++p) pool_backward_plane(g, p, in, up, in_grad);
}

void dense_forward(const DenseGeometry& g, std::span<const double> in, std::span<const double> w,
                   std::span<const double> b, std::span<double> out) {
  const Index rows = g.batch;
  DMM_PARALLEL_FOR
  for (Index n = 0; n < rows; ++n) dense_forward_row(g, n, in, w, b, out);
}

void dense_backward(const DenseGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<const double> up, std::span<double> in_grad, std::span<double> wg,
                    std::span<double> bg) {
  const Index outs = g.out_dim;
  DMM_PARALLEL_FOR
  for (Index o = 0; o < outs; ++o) dense_param_grad_row(g, o, in, up, wg, bg);
  if (in_grad.empty()) return;
  const Index rows = g.batch;
  DMM_PARALLEL_FOR
  for (Index n = 0; n < rows; ++n) dense_input_grad_row(g, n, w, up, in_grad);
}

#undef DMM_PARALLEL_FOR

}  // namespace omp

// ---- dispatch ----

#define DMM_DISPATCH(fn, ...)                              \
  if (backend() == Backend::openmp) return omp::fn(__VA_ARGS__); \
  return serial::fn(__VA_ARGS__)

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<const double> b, std::span<double> out) {
  DMM_DISPATCH(conv2d_forward, g, in, w, b, out);
}
void conv2d_backward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                     std::span<const double> up, std::span<double> in_grad, std::span<double> wg,
                     std::span<double> bg) {
  DMM_DISPATCH(conv2d_backward, g, in, w, up, in_grad, wg, bg);
}
void maxpool_forward(const PoolGeometry& g, std::span<const double> in, std::span<double> out) {
  DMM_DISPATCH(maxpool_forward, g, in, out);
}
void maxpool_backward(const PoolGeometry& g, std::span<const double> in, std::span<const double> up,
                      std::span<double> in_grad) {
  DMM_DISPATCH(maxpool_backward, g, in, up, in_grad);
}
void dense_forward(const DenseGeometry& g, std::span<const double> in, std::span<const double> w,
                   std::span<const double> b, std::span<double> out) {
  DMM_DISPATCH(dense_forward, g, in, w, b, out);
}
void dense_backward(const DenseGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<const double> up, std::span<double> in_grad, std::span<double> wg,
                    std::span<double> bg) {
  DMM_DISPATCH(dense_backward, g, in, w, up, in_grad, wg, bg);
}

#undef DMM_DISPATCH

}  // namespace dmm::kernels
