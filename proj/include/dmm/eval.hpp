#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dmm/data.hpp"
#include "dmm/network.hpp"
#include "dmm/trainer.hpp"

namespace dmm {

struct Confusion {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  bool operator==(const Confusion&) const = default;
};

struct EvalReport {
  std::vector<std::string> attributes;
  std::vector<Confusion> counts;
  std::vector<double> accuracy;           // (tp + tn) / N
  std::vector<double> balanced_accuracy;  // (tpr + tnr) / 2, an undefined rate counts as 0.5
  double mean_accuracy = 0.0;
  double mean_balanced_accuracy = 0.0;
  std::size_t samples = 0;

  bool operator==(const EvalReport&) const = default;
};

/// Metrics for raw scores [N,J] against +-1 labels at thresholds tau.
EvalReport evaluate_scores(const Tensor& scores, const Tensor& labels, std::span<const double> tau,
                           const AttributeSpec& spec);
/// Throws std::invalid_argument on an empty sample set.
EvalReport evaluate(const DmmNetwork& net, std::span<const Sample> samples, std::span<const double> tau);

void write_report_csv(const std::filesystem::path& path, const EvalReport& report);

/// Threshold file: one "name tau" line per attribute, in canonical order.
void write_thresholds(const std::filesystem::path& path, const AttributeSpec& spec, std::span<const double> tau);
/// Throws DataError unless the file lists exactly the spec's attributes.
std::vector<double> read_thresholds(const std::filesystem::path& path, const AttributeSpec& spec);

// ---- experiment harness ----

struct RunResult {
  std::string name;
  std::uint64_t seed = 0;
  AblationFlags flags;
  TrainLog log;
  EvalReport test;
};

/// Trains one config on `data` and evaluates the test split (the validation
/// split when there is no test split) at the learned thresholds.
RunResult run_experiment(const std::string& name, const DatasetSplit& data, const TrainConfig& config);

struct Scheme {
  std::string name;
  TrainConfig config;
};

struct ComparisonRow {
  std::string scheme;
  std::uint64_t seed = 0;
  double mean_accuracy = 0.0;
  bool operator==(const ComparisonRow&) const = default;
};

/// Trains every scheme once per seed (the seed overrides config.seed) on the
/// same data. Needs at least two schemes. Rows are scheme-major.
std::vector<ComparisonRow> compare_schemes(const DatasetSplit& data, const std::vector<Scheme>& schemes,
                                           const std::vector<std::uint64_t>& seeds,
                                           std::vector<RunResult>* runs = nullptr);

void write_comparison_csv(const std::filesystem::path& path, const std::vector<ComparisonRow>& rows);

/// Trains all seven ablation variants from `base`.
std::vector<RunResult> run_ablation_suite(const DatasetSplit& data, const TrainConfig& base);

/// variant,fld,dw,at,ag,<attribute>...,mean_accuracy
void write_ablation_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs);

}  // namespace dmm
