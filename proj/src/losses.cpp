#include "dmm/losses.hpp"

#include <stdexcept>
#include <string>

namespace dmm {
namespace {

void check_pair(const char* what, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 2 || a.dim(0) == 0) {
    throw ShapeError(std::string(what) + ": prediction " + to_string(a.shape()) + " vs target " + to_string(b.shape()));
  }
}

void check_labels(const Tensor& labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1.0 && labels[i] != -1.0) {
      throw std::invalid_argument("fac loss: label " + std::to_string(labels[i]) + " at row " +
                                  std::to_string(i / labels.dim(1)) + " is not +1 or -1");
    }
  }
}

}  // namespace

double fld_loss(const Tensor& pred, const Tensor& truth) {
  check_pair("fld loss", pred, truth);
  const std::size_t n = pred.dim(0), d = pred.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = pred.at(i, k) - truth.at(i, k);
      sq += diff * diff;
    }
    total += sq;
  }
  return total / static_cast<double>(n);
}

Tensor fld_loss_grad(const Tensor& pred, const Tensor& truth, double weight) {
  check_pair("fld loss", pred, truth);
  const double scale = 2.0 * weight / static_cast<double>(pred.dim(0));
  Tensor g(pred.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * (pred[i] - truth[i]);
  return g;
}

std::vector<double> fac_loss_per_attribute(const Tensor& pred, const Tensor& labels) {
  check_pair("fac loss", pred, labels);
  check_labels(labels);
  const std::size_t n = pred.dim(0), j = pred.dim(1);
  std::vector<double> loss(j, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < j; ++k) {
      const double diff = pred.at(i, k) - labels.at(i, k);
      loss[k] += diff * diff;
    }
  }
  for (double& l : loss) l /= static_cast<double>(n);
  return loss;
}

Tensor fac_loss_grad(const Tensor& pred, const Tensor& labels, std::span<const double> weights) {
  check_pair("fac loss", pred, labels);
  check_labels(labels);
  const std::size_t n = pred.dim(0), j = pred.dim(1);
  if (weights.size() != j) throw ShapeError("fac loss: " + std::to_string(weights.size()) + " weights for " + std::to_string(j) + " attributes");
  Tensor g(pred.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < j; ++k) {
      g.at(i, k) = 2.0 * weights[k] * (pred.at(i, k) - labels.at(i, k)) / static_cast<double>(n);
    }
  }
  return g;
}

double joint_loss(std::span<const double> fac_losses, std::span<const double> weights, double fld, double beta) {
  if (fac_losses.size() != weights.size()) {
    throw ShapeError("joint loss: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(fac_losses.size()) + " attribute losses");
  }
  if (beta < 0.0) throw std::invalid_argument("joint loss: beta must be non-negative");
  double total = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (weights[j] < 0.0) throw std::invalid_argument("joint loss: weight " + std::to_string(j) + " is negative");
    total += weights[j] * fac_losses[j];
  }
  return total + beta * fld;
}

LossReport compute_losses(const Tensor& attr_pred, const Tensor& labels, const Tensor& landmark_pred,
                          const Tensor& landmark_truth, std::span<const double> weights, double beta) {
  LossReport r;
  r.beta = beta;
  r.fac_losses = fac_loss_per_attribute(attr_pred, labels);
  r.fld_loss = landmark_pred.empty() ? 0.0 : fld_loss(landmark_pred, landmark_truth);
  r.joint = joint_loss(r.fac_losses, weights, r.fld_loss, beta);
  return r;
}

}  // namespace dmm
