#include "dmm/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dmm {

SchedulerState SchedulerState::initial(std::size_t attributes) {
  SchedulerState s;
  s.lambda.assign(attributes, 1.0);
  s.tau.assign(attributes, 0.0);
  s.prev_val_losses.assign(attributes, 0.0);
  return s;
}

void update_weights(SchedulerState& state, std::span<const double> val_losses, std::optional<double> cap) {
  if (val_losses.size() != state.lambda.size()) {
    throw ShapeError("update_weights: " + std::to_string(val_losses.size()) + " losses for " +
                     std::to_string(state.lambda.size()) + " attributes");
  }
  for (double l : val_losses) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw std::invalid_argument("update_weights: losses must be finite and >= 0");
  }
  if (state.has_prev) {
    for (std::size_t j = 0; j < val_losses.size(); ++j) {
      const double prev = state.prev_val_losses[j];
      double w = prev == 0.0 ? 0.0 : std::abs((val_losses[j] - prev) / prev);
      if (cap) w = std::min(w, *cap);
      state.lambda[j] = w;
    }
  }
  state.prev_val_losses.assign(val_losses.begin(), val_losses.end());
  state.has_prev = true;
}

void update_thresholds(SchedulerState& state, std::span<const std::size_t> fp, std::span<const std::size_t> fn,
                       double gamma, std::size_t epoch, std::size_t validation_size) {
  const std::size_t j = state.tau.size();
  if (fp.size() != j || fn.size() != j) throw ShapeError("update_thresholds: count vectors do not match J");
  if (validation_size == 0) throw std::invalid_argument("update_thresholds: empty validation set");
  for (std::size_t k = 0; k < j; ++k) {
    if (fp[k] > validation_size || fn[k] > validation_size) {
      throw std::invalid_argument("update_thresholds: counts for attribute " + std::to_string(k) +
                                  " exceed validation size " + std::to_string(validation_size));
    }
  }
  const double scale = gamma * static_cast<double>(epoch) / static_cast<double>(validation_size);
  for (std::size_t k = 0; k < j; ++k) {
    state.tau[k] += scale * (static_cast<double>(fp[k]) - static_cast<double>(fn[k]));
  }
}

Tensor predict_labels(const Tensor& outputs, std::span<const double> tau) {
  if (outputs.rank() != 2 || outputs.dim(1) != tau.size()) {
    throw ShapeError("predict_labels: outputs " + to_string(outputs.shape()) + " vs " + std::to_string(tau.size()) +
                     " thresholds");
  }
  Tensor labels(outputs.shape());
  for (std::size_t i = 0; i < outputs.dim(0); ++i) {
    for (std::size_t k = 0; k < tau.size(); ++k) labels.at(i, k) = outputs.at(i, k) > tau[k] ? 1.0 : -1.0;
  }
  return labels;
}

ErrorCounts count_fp_fn(const Tensor& predictions, const Tensor& labels) {
  if (predictions.shape() != labels.shape() || predictions.rank() != 2) {
    throw ShapeError("count_fp_fn: " + to_string(predictions.shape()) + " vs " + to_string(labels.shape()));
  }
  const std::size_t j = predictions.dim(1);
  ErrorCounts c{std::vector<std::size_t>(j, 0), std::vector<std::size_t>(j, 0)};
  for (std::size_t i = 0; i < predictions.dim(0); ++i) {
    for (std::size_t k = 0; k < j; ++k) {
      const bool pos = predictions.at(i, k) > 0.0;
      const bool truth = labels.at(i, k) > 0.0;
      if (pos && !truth) ++c.fp[k];
      if (!pos && truth) ++c.fn[k];
    }
  }
  return c;
}

Scheduler::Scheduler(std::size_t attributes, SchedulerConfig config)
    : config_(config), state_(SchedulerState::initial(attributes)) {}

void Scheduler::update(const ValidationStats& stats, std::size_t epoch,
                       const std::function<void(SchedulerEvent)>& observer) {
  auto emit = [&](SchedulerEvent e) {
    if (observer) observer(e);
  };
  if (config_.adaptive_thresholds) {
    update_thresholds(state_, stats.errors.fp, stats.errors.fn, config_.gamma, epoch, stats.samples);
  }
  emit(SchedulerEvent::update_thresholds);

  if (config_.dynamic_weights) {
    update_weights(state_, stats.fac_losses, config_.lambda_cap);
  } else {
    // Track the trend anyway so traces stay comparable; weights stay at 1.
    state_.prev_val_losses = stats.fac_losses;
    state_.has_prev = true;
  }
  emit(SchedulerEvent::update_weights);

  ++state_.t;
  emit(SchedulerEvent::advance);
}

}  // namespace dmm
