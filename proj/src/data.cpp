#include "dmm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "dmm/format.hpp"

namespace dmm {
namespace fs = std::filesystem;

// ---- batches ----

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: no samples");
  const Sample& first = samples[indices[0]];
  const Shape& shape = first.image.shape();
  const std::size_t n = indices.size(), j = first.labels.size(), l = first.landmarks.size();
  const std::size_t pixels = first.image.size();
  Batch b{Tensor({n, shape[0], shape[1], shape[2]}), Tensor({n, j}), Tensor({n, l})};
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = samples[indices[i]];
    if (s.image.shape() != shape || s.labels.size() != j || s.landmarks.size() != l) {
      throw ShapeError("make_batch: sample " + s.id + " image " + to_string(s.image.shape()) + " vs batch " +
                       to_string(shape));
    }
    std::copy(s.image.data().begin(), s.image.data().end(), b.images.data().begin() + i * pixels);
    std::copy(s.labels.begin(), s.labels.end(), b.labels.data().begin() + i * j);
    std::copy(s.landmarks.begin(), s.landmarks.end(), b.landmarks.data().begin() + i * l);
  }
  return b;
}

Batch make_batch(std::span<const Sample> samples) {
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_batch(samples, idx);
}

// ---- text parsing helpers ----

namespace {

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

[[noreturn]] void fail(const fs::path& path, std::size_t line, const std::string& what) {
  throw DataError(path.string() + ":" + std::to_string(line) + ": " + what);
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open");
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  return out;
}

bool parse_int(const std::string& s, long& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  if (b != e && *b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

bool parse_double(const std::string& s, double& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size() && std::isfinite(out);
}

}  // namespace

AttributeTable parse_attribute_file(const fs::path& path) {
  auto in = open_in(path);
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      if (!tokens(line).empty()) return true;
    }
    return false;
  };
  if (!next()) fail(path, lineno + 1, "missing image count");
  auto head = tokens(line);
  long count = 0;
  if (head.size() != 1 || !parse_int(head[0], count) || count < 0) fail(path, lineno, "expected a single image count");
  if (!next()) fail(path, lineno + 1, "missing attribute names");
  AttributeTable t;
  t.names = tokens(line);
  const std::size_t j = t.names.size();
  while (next()) {
    auto row = tokens(line);
    if (row.size() != j + 1) {
      fail(path, lineno, "expected filename and " + std::to_string(j) + " labels, got " + std::to_string(row.size()) +
                             " tokens");
    }
    std::vector<int> labels(j);
    for (std::size_t k = 0; k < j; ++k) {
      long v = 0;
      if (!parse_int(row[k + 1], v) || (v != 1 && v != -1)) {
        fail(path, lineno, "label '" + row[k + 1] + "' for " + t.names[k] + " is not 1 or -1");
      }
      labels[k] = static_cast<int>(v);
    }
    t.files.push_back(row[0]);
    t.labels.push_back(std::move(labels));
  }
  if (t.files.size() != static_cast<std::size_t>(count)) {
    fail(path, lineno, "header declares " + std::to_string(count) + " images, found " + std::to_string(t.files.size()));
  }
  return t;
}

void write_attribute_file(const fs::path& path, const AttributeTable& t) {
  auto out = open_out(path);
  out << t.files.size() << "\n";
  for (std::size_t k = 0; k < t.names.size(); ++k) out << (k ? " " : "") << t.names[k];
  out << "\n";
  for (std::size_t i = 0; i < t.files.size(); ++i) {
    out << t.files[i];
    for (int v : t.labels[i]) out << (v > 0 ? "  1" : " -1");
    out << "\n";
  }
}

std::vector<LandmarkRow> parse_landmark_file(const fs::path& path, std::size_t landmarks,
                                             const std::function<ImageSize(const std::string&)>& size_of) {
  auto in = open_in(path);
  std::vector<LandmarkRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = tokens(line);
    if (t.empty()) continue;
    if (t.size() != 2 * landmarks + 1) {
      fail(path, lineno, t[0] + ": expected " + std::to_string(2 * landmarks) + " coordinates, got " +
                             std::to_string(t.size() - 1));
    }
    const ImageSize size = size_of(t[0]);
    LandmarkRow row{t[0], std::vector<double>(2 * landmarks)};
    for (std::size_t k = 0; k < 2 * landmarks; ++k) {
      double v = 0;
      if (!parse_double(t[k + 1], v)) fail(path, lineno, t[0] + ": bad coordinate '" + t[k + 1] + "'");
      row.coords[k] = v / static_cast<double>(k % 2 == 0 ? size.width : size.height);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_landmark_file(const fs::path& path, const std::vector<LandmarkRow>& rows,
                         const std::function<ImageSize(const std::string&)>& size_of) {
  auto out = open_out(path);
  for (const auto& r : rows) {
    const ImageSize size = size_of(r.file);
    out << r.file;
    for (std::size_t k = 0; k < r.coords.size(); ++k) {
      out << " " << format_real(r.coords[k] * static_cast<double>(k % 2 == 0 ? size.width : size.height));
    }
    out << "\n";
  }
}

// ---- PNM ----

Tensor read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open");
  auto header_token = [&]() {
    std::string tok;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) return tok;
      } else {
        tok += c;
      }
    }
    return tok;
  };
  const std::string magic = header_token();
  std::size_t channels = magic == "P5" ? 1 : magic == "P6" ? 3 : 0;
  if (!channels) throw DataError(path.string() + ": not a binary PGM/PPM (magic '" + magic + "')");
  long w = 0, h = 0, maxval = 0;
  if (!parse_int(header_token(), w) || !parse_int(header_token(), h) || !parse_int(header_token(), maxval) || w <= 0 ||
      h <= 0 || maxval <= 0 || maxval > 255) {
    throw DataError(path.string() + ": bad PNM header");
  }
  std::vector<unsigned char> raw(static_cast<std::size_t>(w * h) * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw DataError(path.string() + ": truncated pixel data");
  Tensor img({channels, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  const std::size_t plane = static_cast<std::size_t>(w * h);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < channels; ++c) img[c * plane + p] = raw[p * channels + c] / static_cast<double>(maxval);
  }
  return img;
}

void write_pnm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("write_pnm: expected [1|3,H,W], got " + to_string(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2), plane = h * w;
  auto out = open_out(path, std::ios::binary);
  out << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(plane * c);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t k = 0; k < c; ++k) {
      raw[p * c + k] = static_cast<unsigned char>(std::lround(std::clamp(image[k * plane + p], 0.0, 1.0) * 255.0));
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

// ---- dataset directories ----

AttributeSpec read_attribute_groups(const fs::path& path) {
  auto in = open_in(path);
  AttributeSpec spec;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = tokens(line);
    if (t.empty()) continue;
    if (t.size() != 2) fail(path, lineno, "expected '<name> <objective|subjective>'");
    try {
      spec.groups.push_back(parse_group(t[1]));
    } catch (const std::invalid_argument& e) {
      fail(path, lineno, e.what());
    }
    spec.names.push_back(t[0]);
  }
  return spec;
}

void write_attribute_groups(const fs::path& path, const AttributeSpec& spec) {
  auto out = open_out(path);
  for (std::size_t j = 0; j < spec.size(); ++j) out << spec.names[j] << " " << to_string(spec.groups[j]) << "\n";
}

std::vector<Sample> load_split_dir(const fs::path& dir, const AttributeSpec& spec, std::size_t landmarks) {
  const AttributeTable table = parse_attribute_file(dir / "list_attr.txt");
  // Columns may come in any order; map them onto the canonical spec order.
  std::vector<std::size_t> column(spec.size());
  for (std::size_t j = 0; j < spec.size(); ++j) {
    auto it = std::find(table.names.begin(), table.names.end(), spec.names[j]);
    if (it == table.names.end()) throw DataError((dir / "list_attr.txt").string() + ": missing attribute " + spec.names[j]);
    column[j] = static_cast<std::size_t>(it - table.names.begin());
  }
  std::map<std::string, Tensor> images;
  for (const auto& f : table.files) images[f] = read_pnm(dir / "images" / f);
  auto size_of = [&](const std::string& f) -> ImageSize {
    auto it = images.find(f);
    if (it == images.end()) throw DataError((dir / "landmarks.txt").string() + ": unknown image " + f);
    return {it->second.dim(2), it->second.dim(1)};
  };
  auto rows = parse_landmark_file(dir / "landmarks.txt", landmarks, size_of);
  std::map<std::string, std::vector<double>> coords;
  for (auto& r : rows) coords[r.file] = std::move(r.coords);

  std::vector<Sample> samples;
  for (std::size_t i = 0; i < table.files.size(); ++i) {
    const std::string& f = table.files[i];
    auto lm = coords.find(f);
    if (lm == coords.end()) throw DataError((dir / "landmarks.txt").string() + ": no landmarks for " + f);
    Sample s;
    s.id = fs::path(f).stem().string();
    s.image = images[f];
    for (std::size_t j = 0; j < spec.size(); ++j) s.labels.push_back(table.labels[i][column[j]]);
    s.landmarks = lm->second;
    samples.push_back(std::move(s));
  }
  return samples;
}

void save_split_dir(const fs::path& dir, const AttributeSpec& spec, const std::vector<Sample>& samples) {
  fs::create_directories(dir / "images");
  AttributeTable table;
  table.names = spec.names;
  std::vector<LandmarkRow> rows;
  std::map<std::string, ImageSize> sizes;
  for (const auto& s : samples) {
    const std::string file = s.id + ".pgm";
    write_pnm(dir / "images" / file, s.image);
    table.files.push_back(file);
    std::vector<int> labels;
    for (double v : s.labels) labels.push_back(v > 0 ? 1 : -1);
    table.labels.push_back(std::move(labels));
    rows.push_back({file, s.landmarks});
    sizes[file] = {s.image.dim(2), s.image.dim(1)};
  }
  write_attribute_file(dir / "list_attr.txt", table);
  write_landmark_file(dir / "landmarks.txt", rows, [&](const std::string& f) { return sizes.at(f); });
}

DatasetSplit load_dataset(const fs::path& root, std::size_t landmarks) {
  DatasetSplit d;
  d.spec = read_attribute_groups(root / "attribute_groups.txt");
  d.landmarks = landmarks;
  d.train = load_split_dir(root / "train", d.spec, landmarks);
  if (fs::exists(root / "val")) d.val = load_split_dir(root / "val", d.spec, landmarks);
  if (fs::exists(root / "test")) d.test = load_split_dir(root / "test", d.spec, landmarks);
  return d;
}

std::size_t infer_landmark_count(const fs::path& path) {
  auto in = open_in(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = tokens(line);
    if (t.empty()) continue;
    if (t.size() < 3 || (t.size() - 1) % 2 != 0) fail(path, lineno, "expected a filename and an even number of coordinates");
    return (t.size() - 1) / 2;
  }
  throw DataError(path.string() + ": no landmark records");
}

void save_dataset(const fs::path& root, const DatasetSplit& d) {
  fs::create_directories(root);
  write_attribute_groups(root / "attribute_groups.txt", d.spec);
  save_split_dir(root / "train", d.spec, d.train);
  if (!d.val.empty()) save_split_dir(root / "val", d.spec, d.val);
  if (!d.test.empty()) save_split_dir(root / "test", d.spec, d.test);
}

// ---- synthetic generator ----

namespace {

enum PatternKind { kEyeBar, kHat, kForehead, kSmile, kNose, kLips, kPatternKinds };

struct Point {
  int x, y;
};

constexpr int kGrid = static_cast<int>(kSynthGrid);

// Landmark order: left eye, right eye, nose, mouth, mouth corners, brows.
std::vector<Point> face_landmarks(int dx, int dy, int spread, int nose_shift, int mouth_shift) {
  Point le{4 + dx - spread, 6 + dy}, re{11 + dx + spread, 6 + dy};
  Point nose{8 + dx, 9 + dy + nose_shift};
  Point mouth{8 + dx, 12 + dy + nose_shift + mouth_shift};
  return {le, re, nose, mouth, {mouth.x - 2, mouth.y}, {mouth.x + 2, mouth.y}, {le.x, le.y - 2}, {re.x, re.y - 2}};
}

std::vector<Point> footprint(PatternKind kind, const Point& le, const Point& re, const Point& nose, const Point& mouth) {
  std::vector<Point> px;
  switch (kind) {
    case kEyeBar:
      for (int x = le.x + 1; x < re.x; ++x) px.push_back({x, le.y});
      break;
    case kHat:
      for (int y = le.y - 4; y <= le.y - 3; ++y)
        for (int x = le.x - 1; x <= re.x + 1; ++x) px.push_back({x, y});
      break;
    case kForehead:
      for (int x = le.x + 2; x < re.x - 1; x += 2) px.push_back({x, le.y - 2});
      break;
    case kSmile:
      px = {{mouth.x - 2, mouth.y - 1}, {mouth.x + 2, mouth.y - 1}, {mouth.x - 1, mouth.y}, {mouth.x + 1, mouth.y}};
      break;
    case kNose:
      px = {{nose.x, nose.y - 1}, {nose.x - 1, nose.y}, {nose.x + 1, nose.y}};
      break;
    case kLips:
      for (int x = mouth.x - 2; x <= mouth.x + 2; ++x) px.push_back({x, mouth.y + 1});
      break;
    default:
      break;
  }
  return px;
}

Point to_pixel(std::span<const double> lm, std::size_t k) {
  return {static_cast<int>(std::lround(lm[2 * k] * kGrid - 0.5)), static_cast<int>(std::lround(lm[2 * k + 1] * kGrid - 0.5))};
}

}  // namespace

void SynthConfig::validate() const {
  spec.validate(false);
  const std::size_t j = spec.size();
  if (positive_rate.size() != j || difficulty.size() != j) {
    throw std::invalid_argument("synth: positive_rate and difficulty need one entry per attribute");
  }
  for (double r : positive_rate) {
    if (!(r > 0.0 && r < 1.0)) throw std::invalid_argument("synth: positive rates must lie in (0,1)");
  }
  for (double d : difficulty) {
    if (!(d >= 0.0 && d <= 1.0)) throw std::invalid_argument("synth: difficulty must lie in [0,1]");
  }
  if (landmarks < 1 || landmarks > kSynthMaxLandmarks) {
    throw std::invalid_argument("synth: landmark count must be in [1, " + std::to_string(kSynthMaxLandmarks) + "]");
  }
  if (image_size < kSynthGrid) throw std::invalid_argument("synth: image_size must be >= 16");
  if (jitter > 2) throw std::invalid_argument("synth: jitter must be <= 2");
  if (train_size == 0) throw std::invalid_argument("synth: empty training split");
}

std::vector<std::pair<int, int>> attribute_footprint(std::size_t attribute, std::span<const double> landmarks) {
  if (landmarks.size() < 8) throw std::invalid_argument("attribute_footprint: needs at least 4 landmarks");
  const Point le = to_pixel(landmarks, 0), re = to_pixel(landmarks, 1), nose = to_pixel(landmarks, 2),
              mouth = to_pixel(landmarks, 3);
  std::vector<std::pair<int, int>> out;
  for (auto p : footprint(static_cast<PatternKind>(attribute % kPatternKinds), le, re, nose, mouth)) out.emplace_back(p.x, p.y);
  return out;
}

DatasetSplit generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t j = cfg.spec.size();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto coin = [&](double p) { return unit(rng) < p; };
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  auto first_of_kind = [&](PatternKind k) -> std::optional<std::size_t> {
    for (std::size_t a = 0; a < j; ++a) {
      if (a % kPatternKinds == static_cast<std::size_t>(k)) return a;
    }
    return std::nullopt;
  };
  const auto nose_attr = first_of_kind(kNose), smile_attr = first_of_kind(kSmile), lips_attr = first_of_kind(kLips);

  auto make_sample = [&](const std::string& id) {
    Sample s;
    s.id = id;
    s.labels.resize(j);
    for (std::size_t a = 0; a < j; ++a) s.labels[a] = coin(cfg.positive_rate[a]) ? 1.0 : -1.0;
    auto positive = [&](std::optional<std::size_t> a) { return a ? s.labels[*a] > 0 : coin(0.5); };

    const int jit = static_cast<int>(cfg.jitter);
    const int dx = uniform_int(-jit, jit);
    const int dy = uniform_int(-std::min(jit, 2), 0);
    const int spread = uniform_int(0, 1);
    const int nose_shift = positive(nose_attr) ? 1 : 0;
    const int mouth_shift = (positive(lips_attr) ? 1 : 0) - (positive(smile_attr) ? 1 : 0);
    const auto lm = face_landmarks(dx, dy, spread, nose_shift, mouth_shift);

    std::vector<double> grid(kGrid * kGrid);
    for (double& v : grid) v = 0.08 * unit(rng);
    auto paint = [&](int x, int y, double v) {
      if (x >= 0 && x < kGrid && y >= 0 && y < kGrid) grid[y * kGrid + x] = std::max(grid[y * kGrid + x], v);
    };
    for (const auto& p : lm) paint(p.x, p.y, 0.5);

    for (std::size_t a = 0; a < j; ++a) {
      const double d = cfg.difficulty[a];
      double amp = 0.0;
      if (s.labels[a] > 0) {
        amp = 0.9 * (1.0 - d * unit(rng));
      } else if (d > 0.0 && coin(d)) {
        amp = 0.675 * d * unit(rng);
      }
      int ox = 0, oy = 0;
      if (d > 0.0) {
        ox = static_cast<int>(std::clamp(std::lround(0.5 * d * normal(rng)), -1L, 1L));
        oy = static_cast<int>(std::clamp(std::lround(0.5 * d * normal(rng)), -1L, 1L));
      }
      const auto px = footprint(static_cast<PatternKind>(a % kPatternKinds), lm[0], lm[1], lm[2], lm[3]);
      for (const auto& p : px) {
        double v = amp;
        if (d > 0.0) v = std::clamp(v + 0.15 * d * normal(rng), 0.0, 1.0);
        paint(p.x + ox, p.y + oy, v);
      }
    }

    const std::size_t size = cfg.image_size;
    s.image = Tensor({1, size, size});
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double v = grid[(y * kSynthGrid / size) * kSynthGrid + x * kSynthGrid / size];
        s.image[y * size + x] = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
      }
    }
    for (std::size_t k = 0; k < cfg.landmarks; ++k) {
      s.landmarks.push_back((lm[k].x + 0.5) / kGrid);
      s.landmarks.push_back((lm[k].y + 0.5) / kGrid);
    }
    return s;
  };

  DatasetSplit out;
  out.spec = cfg.spec;
  out.landmarks = cfg.landmarks;
  auto fill = [&](std::vector<Sample>& v, std::size_t n, const char* prefix) {
    char id[48];
    for (std::size_t i = 0; i < n; ++i) {
      std::snprintf(id, sizeof id, "%s_%06zu", prefix, i);
      v.push_back(make_sample(id));
    }
  };
  fill(out.train, cfg.train_size, "train");
  fill(out.val, cfg.val_size, "val");
  fill(out.test, cfg.test_size, "test");
  return out;
}

}  // namespace dmm
