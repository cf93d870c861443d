#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace dmm {

/// Scheduler trace as read back from its CSV.
struct TraceTable {
  struct Row {
    std::size_t iteration = 0;
    std::size_t epoch = 0;
    std::string attribute;
    double val_loss = 0.0;
    double lambda = 0.0;
    double tau = 0.0;
    std::size_t fp = 0;
    std::size_t fn = 0;
  };
  std::vector<Row> rows;
};

TraceTable read_trace_csv(const std::filesystem::path& path);

/// One series per attribute over the update iterations.
struct Curves {
  std::string quantity;
  std::vector<std::size_t> iterations;
  std::vector<std::string> attributes;
  std::vector<std::vector<double>> series;  // [attribute][update]
  std::vector<double> mean;                 // pointwise mean, filled for val_loss only
};

/// Builds the val_loss, lambda and tau curves. Throws on an empty trace or
/// when some update is missing an attribute.
std::vector<Curves> build_curves(const TraceTable& trace);

/// Writes <quantity>.csv and <quantity>.svg for every curve into `dir`.
/// Returns the files written.
std::vector<std::filesystem::path> plot_curves(const std::filesystem::path& trace_csv, const std::filesystem::path& dir);

void write_curve_csv(const std::filesystem::path& path, const Curves& c);
void write_curve_svg(const std::filesystem::path& path, const Curves& c);

}  // namespace dmm
