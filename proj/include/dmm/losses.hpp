#pragma once

#include <span>
#include <vector>

#include "dmm/tensor.hpp"

namespace dmm {

/// Landmark regression loss: mean over samples of the squared L2 distance
/// between predicted and true 2T-vectors. Not divided by 2T.
/// pred, truth: [N, 2T].
double fld_loss(const Tensor& pred, const Tensor& truth);
/// d fld_loss / d pred, scaled by `weight`.
Tensor fld_loss_grad(const Tensor& pred, const Tensor& truth, double weight = 1.0);

/// Per-attribute mean squared error against +-1 labels. pred, labels: [N, J].
/// Throws std::invalid_argument for a label outside {+1, -1}.
std::vector<double> fac_loss_per_attribute(const Tensor& pred, const Tensor& labels);
/// d (sum_j weights_j * L_j) / d pred.
Tensor fac_loss_grad(const Tensor& pred, const Tensor& labels, std::span<const double> weights);

/// sum_j weights_j * fac_losses_j + beta * fld. Rejects negative weights.
double joint_loss(std::span<const double> fac_losses, std::span<const double> weights, double fld, double beta);

struct LossReport {
  std::vector<double> fac_losses;
  double fld_loss = 0.0;
  double joint = 0.0;
  double beta = 0.0;
};

/// Evaluates all three losses. An empty landmark prediction means the
/// landmark task is off and contributes zero.
LossReport compute_losses(const Tensor& attr_pred, const Tensor& labels, const Tensor& landmark_pred,
                          const Tensor& landmark_truth, std::span<const double> weights, double beta);

}  // namespace dmm
