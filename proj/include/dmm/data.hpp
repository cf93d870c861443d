#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmm/attributes.hpp"
#include "dmm/tensor.hpp"

namespace dmm {

/// Malformed dataset input. The message carries the file and line (or
/// filename) of the offending record.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Sample {
  std::string id;
  Tensor image;                   // [C,H,W], values in [0,1]
  std::vector<double> labels;     // J values, each +1 or -1
  std::vector<double> landmarks;  // x1 y1 x2 y2 ..., normalized by image width / height
};

struct DatasetSplit {
  AttributeSpec spec;
  std::size_t landmarks = 0;  // T
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

struct Batch {
  Tensor images;     // [N,C,H,W]
  Tensor labels;     // [N,J]
  Tensor landmarks;  // [N,2T]
};

/// Stacks samples that share one image shape. Throws ShapeError otherwise.
Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices);
Batch make_batch(std::span<const Sample> samples);

// ---- annotation files ----
//
// Attribute list (CelebA layout):
//   line 1: image count
//   line 2: attribute names, whitespace separated
//   then one line per image: filename followed by J values, each 1 or -1
//
// Landmark list: one line per image, filename followed by 2T pixel
// coordinates x1 y1 x2 y2 ...

struct AttributeTable {
  std::vector<std::string> names;
  std::vector<std::string> files;
  std::vector<std::vector<int>> labels;
};

AttributeTable parse_attribute_file(const std::filesystem::path& path);
void write_attribute_file(const std::filesystem::path& path, const AttributeTable& table);

struct LandmarkRow {
  std::string file;
  std::vector<double> coords;  // normalized to [0,1]
};

struct ImageSize {
  std::size_t width;
  std::size_t height;
};

/// Parses the landmark list and divides x by image width, y by image height.
/// `size_of` resolves each filename to its image size.
std::vector<LandmarkRow> parse_landmark_file(const std::filesystem::path& path, std::size_t landmarks,
                                             const std::function<ImageSize(const std::string&)>& size_of);
/// Writes pixel coordinates (normalized * size) with round-trip precision.
void write_landmark_file(const std::filesystem::path& path, const std::vector<LandmarkRow>& rows,
                         const std::function<ImageSize(const std::string&)>& size_of);

// ---- raster images ----

/// Reads binary PGM (P5) or PPM (P6), 8-bit. Values scale to [0,1].
Tensor read_pnm(const std::filesystem::path& path);
/// Writes P5 for one channel, P6 for three. Values are rounded to 8 bits.
void write_pnm(const std::filesystem::path& path, const Tensor& image);

// ---- dataset directories ----
//
//   <root>/attribute_groups.txt       "name group" per line, canonical order
//   <root>/<split>/list_attr.txt
//   <root>/<split>/landmarks.txt
//   <root>/<split>/images/<id>.pgm

std::vector<Sample> load_split_dir(const std::filesystem::path& dir, const AttributeSpec& spec, std::size_t landmarks);
void save_split_dir(const std::filesystem::path& dir, const AttributeSpec& spec, const std::vector<Sample>& samples);

AttributeSpec read_attribute_groups(const std::filesystem::path& path);
void write_attribute_groups(const std::filesystem::path& path, const AttributeSpec& spec);

DatasetSplit load_dataset(const std::filesystem::path& root, std::size_t landmarks);
/// Landmark count T read off the first record of a landmark file.
std::size_t infer_landmark_count(const std::filesystem::path& landmark_file);
void save_dataset(const std::filesystem::path& root, const DatasetSplit& data);

// ---- synthetic generator ----

/// Face-like grayscale images on a 16x16 layout (resampled to `image_size`).
/// Landmarks are eyes, nose, mouth, mouth corners and brows (first T used).
/// Each attribute j renders pattern kind j % 6 next to its anchor landmark
/// when positive: eye bar, hat band, forehead dots, smile corners, nose
/// arrow, lip bar. Nose, smile and lip attributes also shift the nose and
/// mouth landmarks, so landmark geometry carries attribute information.
///
/// Difficulty d_j >= 0 weakens positives, adds faint patterns to negatives,
/// adds pixel noise to the footprint and perturbs placement; d_j = 0 keeps
/// the attribute exactly decodable from its footprint.
struct SynthConfig {
  AttributeSpec spec = AttributeSpec::desk_default();
  std::size_t landmarks = 4;
  std::size_t image_size = 16;
  std::vector<double> positive_rate{0.5, 0.3, 0.4, 0.5, 0.05, 0.3};
  std::vector<double> difficulty{0.0, 0.0, 0.1, 0.6, 0.4, 0.7};
  std::size_t train_size = 2000;
  std::size_t val_size = 500;
  std::size_t test_size = 500;
  std::size_t jitter = 2;  // max horizontal face translation, base-grid pixels
  std::uint64_t seed = 1;

  void validate() const;
};

DatasetSplit generate_synthetic(const SynthConfig& config);

/// Base-grid pixels (x, y) covered by attribute j's pattern for a face whose
/// normalized landmarks are given (needs T >= 4). Landmark pixels excluded.
std::vector<std::pair<int, int>> attribute_footprint(std::size_t attribute, std::span<const double> landmarks);

constexpr std::size_t kSynthGrid = 16;
constexpr std::size_t kSynthMaxLandmarks = 8;

}  // namespace dmm
