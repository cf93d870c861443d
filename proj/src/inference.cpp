#include "dmm/inference.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace dmm {

Predictions predict(const DmmNetwork& net, std::span<const Sample> samples, std::size_t chunk) {
  if (samples.empty()) throw std::invalid_argument("predict: no samples");
  if (chunk == 0) chunk = 1;
  const std::size_t n = samples.size(), j = samples[0].labels.size(), l = samples[0].landmarks.size();
  if (j != net.config().attributes.size() || l != 2 * net.config().landmarks) {
    throw ShapeError("predict: samples carry " + std::to_string(j) + " labels / " + std::to_string(l) +
                     " landmark values, network expects " + std::to_string(net.config().attributes.size()) + " / " +
                     std::to_string(2 * net.config().landmarks));
  }
  Predictions out{Tensor({n, j}), Tensor({n, l}), Tensor({n, j}), Tensor({n, l})};

  std::map<Shape, std::vector<std::size_t>> by_shape;
  for (std::size_t i = 0; i < n; ++i) by_shape[samples[i].image.shape()].push_back(i);

  for (const auto& [shape, members] : by_shape) {
    for (std::size_t begin = 0; begin < members.size(); begin += chunk) {
      const std::size_t end = std::min(members.size(), begin + chunk);
      std::span<const std::size_t> idx(members.data() + begin, end - begin);
      const Batch batch = make_batch(samples, idx);
      const NetworkOutput o = net.forward(batch.images);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const std::size_t i = idx[r];
        for (std::size_t k = 0; k < j; ++k) {
          out.attributes.at(i, k) = o.attributes.at(r, k);
          out.labels.at(i, k) = batch.labels.at(r, k);
        }
        for (std::size_t k = 0; k < l; ++k) {
          out.landmarks.at(i, k) = o.landmarks.at(r, k);
          out.landmark_truth.at(i, k) = batch.landmarks.at(r, k);
        }
      }
    }
  }
  return out;
}

}  // namespace dmm
