#include "dmm/eval.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include "dmm/format.hpp"
#include "dmm/inference.hpp"
#include "dmm/scheduler.hpp"

namespace dmm {

namespace {

double rate(std::size_t hit, std::size_t total) {
  return total == 0 ? 0.5 : static_cast<double>(hit) / static_cast<double>(total);
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  return out;
}

}  // namespace

EvalReport evaluate_scores(const Tensor& scores, const Tensor& labels, std::span<const double> tau,
                           const AttributeSpec& spec) {
  if (scores.rank() != 2 || scores.shape() != labels.shape() || scores.dim(1) != spec.size()) {
    throw ShapeError("evaluate: scores " + to_string(scores.shape()) + ", labels " + to_string(labels.shape()) +
                     ", " + std::to_string(spec.size()) + " attributes");
  }
  const std::size_t n = scores.dim(0), j = scores.dim(1);
  if (n == 0) throw std::invalid_argument("evaluate: no samples");
  const Tensor pred = predict_labels(scores, tau);

  EvalReport r;
  r.attributes = spec.names;
  r.samples = n;
  r.counts.resize(j);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < j; ++k) {
      const bool p = pred.at(i, k) > 0.0, t = labels.at(i, k) > 0.0;
      Confusion& c = r.counts[k];
      (p ? (t ? c.tp : c.fp) : (t ? c.fn : c.tn))++;
    }
  }
  for (const auto& c : r.counts) {
    r.accuracy.push_back(static_cast<double>(c.tp + c.tn) / static_cast<double>(n));
    r.balanced_accuracy.push_back(0.5 * (rate(c.tp, c.tp + c.fn) + rate(c.tn, c.tn + c.fp)));
  }
  for (std::size_t k = 0; k < j; ++k) {
    r.mean_accuracy += r.accuracy[k];
    r.mean_balanced_accuracy += r.balanced_accuracy[k];
  }
  r.mean_accuracy /= static_cast<double>(j);
  r.mean_balanced_accuracy /= static_cast<double>(j);
  return r;
}

EvalReport evaluate(const DmmNetwork& net, std::span<const Sample> samples, std::span<const double> tau) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  const Predictions p = predict(net, samples);
  return evaluate_scores(p.attributes, p.labels, tau, net.config().attributes);
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& r) {
  auto out = open_csv(path);
  out << "attribute,accuracy,balanced_accuracy,tp,tn,fp,fn\n";
  for (std::size_t k = 0; k < r.attributes.size(); ++k) {
    const Confusion& c = r.counts[k];
    out << r.attributes[k] << ',' << format_real(r.accuracy[k]) << ',' << format_real(r.balanced_accuracy[k]) << ',' << c.tp << ','
        << c.tn << ',' << c.fp << ',' << c.fn << '\n';
  }
  out << "mean," << format_real(r.mean_accuracy) << ',' << format_real(r.mean_balanced_accuracy) << ",,,,\n";
}

void write_thresholds(const std::filesystem::path& path, const AttributeSpec& spec, std::span<const double> tau) {
  if (tau.size() != spec.size()) throw ShapeError("write_thresholds: " + std::to_string(tau.size()) + " values for " +
                                                  std::to_string(spec.size()) + " attributes");
  auto out = open_csv(path);
  for (std::size_t j = 0; j < spec.size(); ++j) out << spec.names[j] << ' ' << format_real(tau[j]) << '\n';
}

std::vector<double> read_thresholds(const std::filesystem::path& path, const AttributeSpec& spec) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open");
  std::vector<double> tau;
  std::string name, value;
  std::size_t line = 0;
  while (in >> name >> value) {
    ++line;
    if (line > spec.size() || name != spec.names[line - 1]) {
      throw DataError(path.string() + ":" + std::to_string(line) + ": unexpected attribute '" + name + "'");
    }
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (end != value.c_str() + value.size() || !std::isfinite(v)) {
      throw DataError(path.string() + ":" + std::to_string(line) + ": bad threshold '" + value + "'");
    }
    tau.push_back(v);
  }
  if (tau.size() != spec.size()) throw DataError(path.string() + ": expected " + std::to_string(spec.size()) + " thresholds");
  return tau;
}

RunResult run_experiment(const std::string& name, const DatasetSplit& data, const TrainConfig& config) {
  DmmNetwork net = make_network(data, config);
  RunResult r;
  r.name = name;
  r.seed = config.seed;
  r.flags = config.flags;
  r.log = train(net, data, config);
  const std::vector<Sample>& held_out = data.test.empty() ? data.val : data.test;
  r.test = evaluate(net, held_out, r.log.scheduler.tau);
  return r;
}

std::vector<ComparisonRow> compare_schemes(const DatasetSplit& data, const std::vector<Scheme>& schemes,
                                           const std::vector<std::uint64_t>& seeds, std::vector<RunResult>* runs) {
  if (schemes.size() < 2) throw std::invalid_argument("compare_schemes: need at least two schemes");
  if (seeds.empty()) throw std::invalid_argument("compare_schemes: no seeds");
  std::vector<ComparisonRow> rows;
  for (const auto& s : schemes) {
    for (std::uint64_t seed : seeds) {
      TrainConfig c = s.config;
      c.seed = seed;
      RunResult r = run_experiment(s.name, data, c);
      rows.push_back({s.name, seed, r.test.mean_accuracy});
      if (runs) runs->push_back(std::move(r));
    }
  }
  return rows;
}

void write_comparison_csv(const std::filesystem::path& path, const std::vector<ComparisonRow>& rows) {
  auto out = open_csv(path);
  out << "scheme,seed,mean_accuracy\n";
  for (const auto& r : rows) out << r.scheme << ',' << r.seed << ',' << format_real(r.mean_accuracy) << '\n';
}

std::vector<RunResult> run_ablation_suite(const DatasetSplit& data, const TrainConfig& base) {
  std::vector<RunResult> runs;
  for (const auto& v : ablation_variants()) runs.push_back(run_experiment(v.name, data, with_flags(base, v.flags)));
  return runs;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs) {
  auto out = open_csv(path);
  out << "variant,fld,dw,at,ag";
  if (!runs.empty()) {
    for (const auto& a : runs.front().test.attributes) out << ',' << a;
  }
  out << ",mean_accuracy\n";
  for (const auto& r : runs) {
    const AblationFlags& f = r.flags;
    out << r.name << ',' << f.use_fld << ',' << f.use_dynamic_weights << ',' << f.use_adaptive_threshold << ','
        << f.use_grouping;
    for (double a : r.test.accuracy) out << ',' << format_real(a);
    out << ',' << format_real(r.test.mean_accuracy) << '\n';
  }
}

}  // namespace dmm
