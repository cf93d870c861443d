#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmm/data.hpp"
#include "dmm/network.hpp"
#include "dmm/scheduler.hpp"

namespace dmm {

/// Mechanism switches: landmark branch (FLD), dynamic weights (DW),
/// adaptive thresholds (AT), attribute grouping (AG).
struct AblationFlags {
  bool use_fld = true;
  bool use_dynamic_weights = true;
  bool use_adaptive_threshold = true;
  bool use_grouping = true;

  bool operator==(const AblationFlags&) const = default;
};

enum class ValidationSource { val_split, train_split };
enum class LrMonitor { joint, mean_fac };

std::string to_string(ValidationSource source);
std::string to_string(LrMonitor monitor);

struct TrainConfig {
  std::size_t max_iterations = 3000;  // M
  std::size_t update_interval = 100;  // P
  std::size_t batch_size = 64;
  double base_lr = 0.001;
  double momentum = 0.0;
  double lr_decay_factor = 0.1;
  std::size_t plateau_patience = 3;  // scheduler updates without improvement
  LrMonitor lr_monitor = LrMonitor::joint;
  double beta = 0.5;
  double gamma = 0.01;
  std::uint64_t seed = 1;
  std::optional<double> lambda_cap;
  AblationFlags flags;
  ValidationSource validation_source = ValidationSource::val_split;
  bool freeze_backbone = false;
  BackboneConfig backbone;
  HeadWidths heads = HeadWidths::desk();

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Iterations covering `epochs` passes over `train_size` samples.
std::size_t iterations_for_epochs(double epochs, std::size_t train_size, std::size_t batch_size);

/// Network matching the data's attributes and landmarks, the config's
/// grouping flag, backbone and head widths, initialized from config.seed.
DmmNetwork make_network(const DatasetSplit& data, const TrainConfig& config);

/// One row per attribute per scheduler update. fp/fn are counted at the
/// thresholds in force before the update; lambda/tau are the values after it.
struct TraceRow {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  std::size_t attribute = 0;
  double val_loss = 0.0;
  double lambda = 0.0;
  double tau = 0.0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  bool operator==(const TraceRow&) const = default;
};

struct LossPoint {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  double joint = 0.0;
  double learning_rate = 0.0;

  bool operator==(const LossPoint&) const = default;
};

struct LrEvent {
  std::size_t iteration = 0;
  double old_lr = 0.0;
  double new_lr = 0.0;

  bool operator==(const LrEvent&) const = default;
};

struct TrainLog {
  std::vector<TraceRow> trace;
  std::vector<LossPoint> losses;
  std::vector<LrEvent> lr_events;
  std::vector<double> monitor_history;  // validation loss watched by the LR policy
  std::size_t updates = 0;
  SchedulerState scheduler;  // state after the last update
  std::string checkpoint;

  bool operator==(const TrainLog&) const = default;
};

enum class TrainEventKind { validation_loss, update_thresholds, update_weights, advance, joint_loss, sgd_step };
std::string to_string(TrainEventKind kind);

struct TrainEvent {
  TrainEventKind kind;
  std::size_t loop;
};

using TrainObserver = std::function<void(const TrainEvent&)>;

/// Raised when the joint loss stops being finite.
class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Joint training loop. Iterations loop = 0..M inclusive; whenever
/// loop % P == 0 the scheduler first evaluates the validation set, then
/// updates thresholds, weights and t, and the LR policy sees the new
/// validation loss. Every iteration then takes one SGD step on a minibatch.
TrainLog train(DmmNetwork& net, const DatasetSplit& data, const TrainConfig& config,
               const TrainObserver& observer = {});

/// Learning rate after the last entry of `history`. Replays the history
/// tracking the best value (strict improvement resets); once `patience`
/// updates pass without improvement the rate is multiplied by the decay
/// factor and the wait restarts.
double lr_policy(const std::vector<double>& history, double current_lr, const TrainConfig& config);

struct Variant {
  std::string name;
  AblationFlags flags;
};

/// The seven ablation variants, Baseline through the full model.
const std::vector<Variant>& ablation_variants();
TrainConfig with_flags(TrainConfig config, const AblationFlags& flags);

void write_trace_csv(const std::filesystem::path& path, const TrainLog& log, const AttributeSpec& spec);
void write_loss_csv(const std::filesystem::path& path, const TrainLog& log);
void write_lr_csv(const std::filesystem::path& path, const TrainLog& log);

}  // namespace dmm
