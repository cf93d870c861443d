#include "dmm/spp.hpp"

#include <stdexcept>

namespace dmm {
namespace {

struct Planes {
  std::size_t batch, channels, h, w;
  bool batched;
};

Planes planes_of(const Tensor& input, const SppConfig& config) {
  if (config.levels < 1) throw std::invalid_argument("spp: levels must be >= 1");
  const Shape& s = input.shape();
  Planes p{};
  if (s.size() == 3) {
    p = {1, s[0], s[1], s[2], false};
  } else if (s.size() == 4) {
    p = {s[0], s[1], s[2], s[3], true};
  } else {
    throw ShapeError("spp: expected [C,H,W] or [N,C,H,W], got " + to_string(s));
  }
  if (p.h < 1 || p.w < 1 || p.channels < 1) throw ShapeError("spp: empty feature map " + to_string(s));
  return p;
}

std::size_t cell_argmax(const double* plane, std::size_t width, SppCell rows, SppCell cols) {
  std::size_t best = rows.begin * width + cols.begin;
  for (std::size_t y = rows.begin; y < rows.end; ++y) {
    for (std::size_t x = cols.begin; x < cols.end; ++x) {
      if (plane[y * width + x] > plane[best]) best = y * width + x;
    }
  }
  return best;
}

// Calls fn(output_offset, plane_index, argmax_in_plane) for every pooled cell.
template <class Fn>
void for_each_cell(const Tensor& input, const Planes& p, const SppConfig& config, Fn&& fn) {
  const std::size_t per_sample = config.output_length(p.channels);
  const std::size_t plane_size = p.h * p.w;
  for (std::size_t n = 0; n < p.batch; ++n) {
    std::size_t offset = n * per_sample;
    for (std::size_t k = 1; k <= config.levels; ++k) {
      for (std::size_t c = 0; c < p.channels; ++c) {
        const std::size_t plane = n * p.channels + c;
        const double* src = input.data().data() + plane * plane_size;
        for (std::size_t i = 0; i < k; ++i) {
          const SppCell rows = spp_cell(p.h, k, i);
          for (std::size_t j = 0; j < k; ++j) {
            fn(offset++, plane, cell_argmax(src, p.w, rows, spp_cell(p.w, k, j)));
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t SppConfig::cells_per_channel() const {
  std::size_t total = 0;
  for (std::size_t k = 1; k <= levels; ++k) total += k * k;
  return total;
}

SppCell spp_cell(std::size_t extent, std::size_t level, std::size_t index) {
  const std::size_t begin = index * extent / level;
  const std::size_t end = extent >= level ? (index + 1) * extent / level : ((index + 1) * extent + level - 1) / level;
  return {begin, end};
}

Tensor spp_forward(const Tensor& input, const SppConfig& config) {
  const Planes p = planes_of(input, config);
  const std::size_t len = config.output_length(p.channels);
  Tensor out(p.batched ? Shape{p.batch, len} : Shape{len});
  const std::size_t plane_size = p.h * p.w;
  for_each_cell(input, p, config, [&](std::size_t o, std::size_t plane, std::size_t arg) {
    out[o] = input[plane * plane_size + arg];
  });
  return out;
}

Tensor spp_backward(const Tensor& input, const SppConfig& config, const Tensor& upstream) {
  const Planes p = planes_of(input, config);
  const std::size_t len = config.output_length(p.channels);
  if (upstream.size() != p.batch * len) {
    throw ShapeError("spp backward: upstream " + to_string(upstream.shape()) + " does not match output length " +
                     std::to_string(p.batch * len));
  }
  Tensor grad(input.shape());
  const std::size_t plane_size = p.h * p.w;
  for_each_cell(input, p, config, [&](std::size_t o, std::size_t plane, std::size_t arg) {
    grad[plane * plane_size + arg] += upstream[o];
  });
  return grad;
}

}  // namespace dmm
