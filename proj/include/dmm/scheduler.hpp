#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dmm/tensor.hpp"

namespace dmm {

/// Per-attribute loss weights and decision thresholds, refreshed from whole
/// validation-set statistics every P training iterations.
struct SchedulerState {
  std::vector<double> lambda;           // loss weight per attribute, starts at 1
  std::vector<double> tau;              // decision threshold per attribute, starts at 0
  std::vector<double> prev_val_losses;  // validation loss at the previous update
  bool has_prev = false;
  std::size_t t = 0;  // completed scheduler updates

  static SchedulerState initial(std::size_t attributes);
  bool operator==(const SchedulerState&) const = default;
};

/// Relative-trend weighting: lambda_j = |(L_j - prev_j) / prev_j|, with
/// lambda_j = 0 when prev_j == 0. The first call only records the losses
/// (there is no trend yet) and keeps lambda at its initial value. Optional cap
/// clamps every weight to at most `cap`. Does not advance `t`.
void update_weights(SchedulerState& state, std::span<const double> val_losses, std::optional<double> cap = {});

/// tau_j += gamma * epoch * (fp_j - fn_j) / V. Counts must lie in [0, V].
void update_thresholds(SchedulerState& state, std::span<const std::size_t> fp, std::span<const std::size_t> fn,
                       double gamma, std::size_t epoch, std::size_t validation_size);

/// +1 where output > tau_j, -1 otherwise (a tie maps to -1). outputs: [N,J].
Tensor predict_labels(const Tensor& outputs, std::span<const double> tau);

struct ErrorCounts {
  std::vector<std::size_t> fp;  // predicted +1, label -1
  std::vector<std::size_t> fn;  // predicted -1, label +1
};

ErrorCounts count_fp_fn(const Tensor& predictions, const Tensor& labels);

struct SchedulerConfig {
  double gamma = 0.01;
  bool dynamic_weights = true;
  bool adaptive_thresholds = true;
  std::optional<double> lambda_cap;  // off unless set; 10 is the usual value
};

/// Observation passed to Scheduler::update. fp/fn are counted at the current
/// thresholds on the same set the losses come from.
struct ValidationStats {
  std::vector<double> fac_losses;
  ErrorCounts errors;
  std::size_t samples = 0;
};

enum class SchedulerEvent { update_thresholds, update_weights, advance };

/// One scheduler update in fixed order: thresholds, weights, t += 1.
/// Disabled mechanisms keep their initial values (lambda = 1, tau = 0) but
/// still emit their event.
class Scheduler {
 public:
  Scheduler(std::size_t attributes, SchedulerConfig config);

  const SchedulerState& state() const { return state_; }
  const SchedulerConfig& config() const { return config_; }

  void update(const ValidationStats& stats, std::size_t epoch,
              const std::function<void(SchedulerEvent)>& observer = {});

 private:
  SchedulerConfig config_;
  SchedulerState state_;
};

}  // namespace dmm
