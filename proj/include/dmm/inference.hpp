#pragma once

#include <span>

#include "dmm/data.hpp"
#include "dmm/network.hpp"

namespace dmm {

struct Predictions {
  Tensor attributes;  // [N,J], canonical order
  Tensor landmarks;   // [N,2T]
  Tensor labels;      // [N,J] ground truth
  Tensor landmark_truth;
};

/// Runs the network over `samples` in their given order. Samples are grouped
/// into same-shape chunks of at most `chunk` images, so mixed sizes are fine.
Predictions predict(const DmmNetwork& net, std::span<const Sample> samples, std::size_t chunk = 256);

}  // namespace dmm
