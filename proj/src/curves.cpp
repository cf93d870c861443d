#include "dmm/curves.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dmm/config.hpp"

namespace dmm {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(line);
  while (std::getline(in, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <class T>
T parse_field(const std::string& s, const std::string& where) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw std::runtime_error(where + "bad field '" + s + "'");
  return v;
}

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

}  // namespace

TraceTable read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open trace");
  std::string line;
  if (!std::getline(in, line) || line != "iteration,epoch,attribute,val_loss,lambda,tau,fp,fn") {
    throw std::runtime_error(path.string() + ":1: not a scheduler trace header");
  }
  TraceTable t;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    const auto f = split_csv(line);
    if (f.size() != 8) throw std::runtime_error(where + "expected 8 fields, got " + std::to_string(f.size()));
    TraceTable::Row r;
    r.iteration = parse_field<std::size_t>(f[0], where);
    r.epoch = parse_field<std::size_t>(f[1], where);
    r.attribute = f[2];
    r.val_loss = parse_field<double>(f[3], where);
    r.lambda = parse_field<double>(f[4], where);
    r.tau = parse_field<double>(f[5], where);
    r.fp = parse_field<std::size_t>(f[6], where);
    r.fn = parse_field<std::size_t>(f[7], where);
    t.rows.push_back(std::move(r));
  }
  return t;
}

std::vector<Curves> build_curves(const TraceTable& trace) {
  if (trace.rows.empty()) throw std::invalid_argument("plot_curves: empty trace");
  std::vector<std::string> attrs;
  std::vector<std::size_t> iters;
  for (const auto& r : trace.rows) {
    if (std::find(attrs.begin(), attrs.end(), r.attribute) == attrs.end()) attrs.push_back(r.attribute);
    if (iters.empty() || iters.back() != r.iteration) iters.push_back(r.iteration);
  }
  const std::size_t a_n = attrs.size(), u_n = iters.size();
  if (trace.rows.size() != a_n * u_n) {
    throw std::invalid_argument("plot_curves: trace has " + std::to_string(trace.rows.size()) + " rows for " +
                                std::to_string(u_n) + " updates of " + std::to_string(a_n) + " attributes");
  }
  std::vector<Curves> out;
  for (const char* q : {"val_loss", "lambda", "tau"}) {
    out.push_back({q, iters, attrs, std::vector<std::vector<double>>(a_n, std::vector<double>(u_n)), {}});
  }
  for (std::size_t u = 0; u < u_n; ++u) {
    for (std::size_t a = 0; a < a_n; ++a) {
      const auto& r = trace.rows[u * a_n + a];
      if (r.iteration != iters[u] || r.attribute != attrs[a]) {
        throw std::invalid_argument("plot_curves: update at iteration " + std::to_string(iters[u]) +
                                    " lists attributes out of order");
      }
      out[0].series[a][u] = r.val_loss;
      out[1].series[a][u] = r.lambda;
      out[2].series[a][u] = r.tau;
    }
  }
  out[0].mean.assign(u_n, 0.0);
  for (std::size_t u = 0; u < u_n; ++u) {
    for (std::size_t a = 0; a < a_n; ++a) out[0].mean[u] += out[0].series[a][u];
    out[0].mean[u] /= static_cast<double>(a_n);
  }
  return out;
}

void write_curve_csv(const std::filesystem::path& path, const Curves& c) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "iteration";
  for (const auto& a : c.attributes) out << ',' << a;
  if (!c.mean.empty()) out << ",mean";
  out << '\n';
  for (std::size_t u = 0; u < c.iterations.size(); ++u) {
    out << c.iterations[u];
    for (const auto& s : c.series) out << ',' << format_real(s[u]);
    if (!c.mean.empty()) out << ',' << format_real(c.mean[u]);
    out << '\n';
  }
}

void write_curve_svg(const std::filesystem::path& path, const Curves& c) {
  constexpr double width = 640, height = 400, margin = 50;
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& s : c.series) {
    for (double v : s) {
      lo = first ? v : std::min(lo, v);
      hi = first ? v : std::max(hi, v);
      first = false;
    }
  }
  if (hi == lo) hi = lo + 1.0;
  const double x0 = static_cast<double>(c.iterations.front());
  const double x1 = std::max(x0 + 1.0, static_cast<double>(c.iterations.back()));
  auto px = [&](std::size_t it) { return margin + (static_cast<double>(it) - x0) / (x1 - x0) * (width - 2 * margin); };
  auto py = [&](double v) { return height - margin - (v - lo) / (hi - lo) * (height - 2 * margin); };

  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  char buf[128];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"20\" font-size=\"14\">%s</text>\n", margin, c.quantity.c_str());
  out << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"5\" y=\"%g\" font-size=\"10\">%.4g</text>\n", margin, hi);
  out << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"5\" y=\"%g\" font-size=\"10\">%.4g</text>\n", height - margin, lo);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<polyline points=\"%g,%g %g,%g %g,%g\" fill=\"none\" stroke=\"black\"/>\n", margin, margin, margin,
                height - margin, width - margin, height - margin);
  out << buf;
  auto polyline = [&](const std::vector<double>& s, const char* color, const char* dash) {
    out << "<polyline fill=\"none\" stroke=\"" << color << "\"" << dash << " points=\"";
    for (std::size_t u = 0; u < s.size(); ++u) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", u ? " " : "", px(c.iterations[u]), py(s[u]));
      out << buf;
    }
    out << "\"/>\n";
  };
  for (std::size_t a = 0; a < c.series.size(); ++a) {
    const char* color = kPalette[a % std::size(kPalette)];
    polyline(c.series[a], color, "");
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"10\" fill=\"%s\">%s</text>\n",
                  width - margin + 4, margin + 12.0 * static_cast<double>(a), color, c.attributes[a].c_str());
    out << buf;
  }
  if (!c.mean.empty()) polyline(c.mean, "black", " stroke-dasharray=\"4,3\"");
  out << "</svg>\n";
}

std::vector<std::filesystem::path> plot_curves(const std::filesystem::path& trace_csv, const std::filesystem::path& dir) {
  const auto curves = build_curves(read_trace_csv(trace_csv));
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  for (const auto& c : curves) {
    files.push_back(dir / (c.quantity + ".csv"));
    write_curve_csv(files.back(), c);
    files.push_back(dir / (c.quantity + ".svg"));
    write_curve_svg(files.back(), c);
  }
  return files;
}

}  // namespace dmm
