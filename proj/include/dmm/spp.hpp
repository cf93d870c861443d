#pragma once

#include <cstddef>

#include "dmm/tensor.hpp"

namespace dmm {

/// n-level spatial pyramid max pooling. Level k (k = 1..levels) splits each
/// feature plane into a k x k grid and keeps the maximum of every cell, so the
/// output length per channel is 1 + 4 + ... + levels^2 for any input size.
///
/// Cell i of k along an axis of extent E spans [floor(iE/k), floor((i+1)E/k)).
/// When E < k the end uses ceil instead, so cells overlap but are never empty.
///
/// Output layout: level-major, then channel, then cell row-major.
struct SppConfig {
  std::size_t levels = 1;

  std::size_t cells_per_channel() const;
  std::size_t output_length(std::size_t channels) const { return channels * cells_per_channel(); }
};

struct SppCell {
  std::size_t begin;
  std::size_t end;
};

SppCell spp_cell(std::size_t extent, std::size_t level, std::size_t index);

/// [C,H,W] -> [C*cells] or [N,C,H,W] -> [N, C*cells].
Tensor spp_forward(const Tensor& input, const SppConfig& config);

/// Routes each upstream element to its cell's argmax (first in row-major
/// order on ties); contributions from different levels add.
Tensor spp_backward(const Tensor& input, const SppConfig& config, const Tensor& upstream);

}  // namespace dmm
