#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "dmm/data.hpp"
#include "testing.hpp"

using namespace dmm;
using dmm::testing::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

std::vector<std::vector<std::string>> split_lines(const std::string& text) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    std::istringstream ls(line);
    std::vector<std::string> toks;
    for (std::string t; ls >> t;) toks.push_back(t);
    out.push_back(toks);
  }
  return out;
}

std::string join_lines(const std::vector<std::vector<std::string>>& lines) {
  std::string s;
  for (const auto& l : lines) {
    for (std::size_t i = 0; i < l.size(); ++i) s += (i ? " " : "") + l[i];
    s += "\n";
  }
  return s;
}

// Mean pixel value over attribute j's footprint on the 16x16 grid.
double footprint_mean(const Sample& s, std::size_t j) {
  const auto px = attribute_footprint(j, s.landmarks);
  double total = 0.0;
  for (auto [x, y] : px) total += s.image[static_cast<std::size_t>(y) * 16 + static_cast<std::size_t>(x)];
  return total / static_cast<double>(px.size());
}

}  // namespace

TEST(AttributeFile, ParsesWellFormedFile) {
  TempDir dir("attr");
  write_text(dir / "a.txt", "2\nSmiling Bangs\nx.pgm 1 -1\ny.pgm -1  1\n");
  const AttributeTable t = parse_attribute_file(dir / "a.txt");
  EXPECT_EQ(t.names, (std::vector<std::string>{"Smiling", "Bangs"}));
  EXPECT_EQ(t.files, (std::vector<std::string>{"x.pgm", "y.pgm"}));
  EXPECT_EQ(t.labels, (std::vector<std::vector<int>>{{1, -1}, {-1, 1}}));
}

TEST(AttributeFile, ErrorsCarryLineNumbers) {
  TempDir dir("attr");
  write_text(dir / "zero.txt", "2\nA B\nx.pgm 1 -1\ny.pgm 0 1\n");
  EXPECT_NE(error_of([&] { parse_attribute_file(dir / "zero.txt"); }).find("zero.txt:4:"), std::string::npos);
  write_text(dir / "short.txt", "1\nA B\nx.pgm 1\n");
  EXPECT_NE(error_of([&] { parse_attribute_file(dir / "short.txt"); }).find("short.txt:3:"), std::string::npos);
  write_text(dir / "count.txt", "3\nA\nx.pgm 1\n");
  EXPECT_NE(error_of([&] { parse_attribute_file(dir / "count.txt"); }).find("declares 3"), std::string::npos);
  write_text(dir / "head.txt", "two\nA\n");
  EXPECT_NE(error_of([&] { parse_attribute_file(dir / "head.txt"); }).find("head.txt:1:"), std::string::npos);
  EXPECT_THROW(parse_attribute_file(dir / "missing.txt"), DataError);
}

TEST(AttributeFile, WriterParserRoundTrip) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.3);
  AttributeTable t;
  t.names = {"A", "B", "C", "D"};
  for (int i = 0; i < 50; ++i) {
    t.files.push_back("img" + std::to_string(i) + ".pgm");
    std::vector<int> row;
    for (int k = 0; k < 4; ++k) row.push_back(coin(rng) ? 1 : -1);
    t.labels.push_back(row);
  }
  TempDir dir("attr");
  write_attribute_file(dir / "a.txt", t);
  const AttributeTable back = parse_attribute_file(dir / "a.txt");
  EXPECT_EQ(back.names, t.names);
  EXPECT_EQ(back.files, t.files);
  EXPECT_EQ(back.labels, t.labels);
}

TEST(AttributeFile, RejectsEveryTokenCountCorruption) {
  TempDir dir("fuzz");
  AttributeTable t{{"A", "B", "C"}, {"p.pgm", "q.pgm", "r.pgm"}, {{1, -1, 1}, {-1, -1, 1}, {1, 1, -1}}};
  write_attribute_file(dir / "ok.txt", t);
  const auto lines = split_lines(dmm::testing::slurp(dir / "ok.txt"));
  std::mt19937_64 rng(4);
  int rejected = 0, tried = 0;
  for (int trial = 0; trial < 300; ++trial) {
    auto m = lines;
    const std::size_t li = std::uniform_int_distribution<std::size_t>(0, m.size() - 1)(rng);
    auto& row = m[li];
    if (trial % 2 == 0 && !row.empty()) {
      row.erase(row.begin() + static_cast<long>(std::uniform_int_distribution<std::size_t>(0, row.size() - 1)(rng)));
    } else {
      row.insert(row.begin() + static_cast<long>(std::uniform_int_distribution<std::size_t>(0, row.size())(rng)), "1");
    }
    write_text(dir / "m.txt", join_lines(m));
    ++tried;
    try {
      parse_attribute_file(dir / "m.txt");
    } catch (const DataError&) {
      ++rejected;
    }
  }
  EXPECT_EQ(rejected, tried);
}

TEST(LandmarkFile, ParsesAndNormalizes) {
  TempDir dir("lm");
  write_text(dir / "l.txt", "a.pgm 20 10 0 5\n");
  auto rows = parse_landmark_file(dir / "l.txt", 2, [](const std::string&) { return ImageSize{20, 40}; });
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].coords, (std::vector<double>{1.0, 0.25, 0.0, 0.125}));
}

TEST(LandmarkFile, WrongCountNamesFile) {
  TempDir dir("lm");
  write_text(dir / "l.txt", "a.pgm 1 2 3 4\nb.pgm 1 2 3\n");
  const std::string e = error_of([&] {
    parse_landmark_file(dir / "l.txt", 2, [](const std::string&) { return ImageSize{16, 16}; });
  });
  EXPECT_NE(e.find("b.pgm"), std::string::npos) << e;
  EXPECT_NE(e.find(":2:"), std::string::npos) << e;
}

TEST(LandmarkFile, RoundTrip) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<LandmarkRow> rows;
  for (int i = 0; i < 40; ++i) {
    LandmarkRow r{"f" + std::to_string(i), {}};
    for (int k = 0; k < 8; ++k) r.coords.push_back(u(rng));
    rows.push_back(r);
  }
  TempDir dir("lm");
  // Power-of-two sizes scale exactly; other sizes are exact up to one rounding.
  for (ImageSize size : {ImageSize{16, 64}, ImageSize{24, 36}}) {
    auto size_of = [&](const std::string&) { return size; };
    write_landmark_file(dir / "l.txt", rows, size_of);
    const auto back = parse_landmark_file(dir / "l.txt", 4, size_of);
    ASSERT_EQ(back.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t k = 0; k < 8; ++k) {
        if (size.width == 16) EXPECT_EQ(back[i].coords[k], rows[i].coords[k]);
        else EXPECT_NEAR(back[i].coords[k], rows[i].coords[k], 4e-16);
      }
    }
  }
}

TEST(LandmarkFile, RejectsEveryTokenCountCorruption) {
  TempDir dir("fuzz");
  const std::string ok = "a.pgm 1 2 3 4\nb.pgm 5 6 7 8\n";
  const auto lines = split_lines(ok);
  auto size_of = [](const std::string&) { return ImageSize{16, 16}; };
  for (std::size_t li = 0; li < lines.size(); ++li) {
    for (std::size_t pos = 1; pos <= lines[li].size(); ++pos) {
      auto ins = lines;
      ins[li].insert(ins[li].begin() + static_cast<long>(pos), "9");
      write_text(dir / "m.txt", join_lines(ins));
      EXPECT_THROW(parse_landmark_file(dir / "m.txt", 2, size_of), DataError);
      auto del = lines;
      del[li].erase(del[li].begin() + static_cast<long>(pos - 1));
      write_text(dir / "m.txt", join_lines(del));
      EXPECT_THROW(parse_landmark_file(dir / "m.txt", 2, size_of), DataError);
    }
  }
}

TEST(Pnm, GrayAndColorRoundTrip) {
  TempDir dir("pnm");
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> byte(0, 255);
  for (std::size_t c : {std::size_t{1}, std::size_t{3}}) {
    Tensor img({c, 5, 7});
    for (double& v : img.values()) v = byte(rng) / 255.0;
    write_pnm(dir / "i.pnm", img);
    EXPECT_EQ(read_pnm(dir / "i.pnm"), img);
  }
}

TEST(Pnm, HeaderCommentsAndErrors) {
  TempDir dir("pnm");
  {
    std::ofstream f(dir / "c.pgm", std::ios::binary);
    f << "P5\n# a comment\n2 1\n255\n";
    f.put(static_cast<char>(0));
    f.put(static_cast<char>(255));
  }
  EXPECT_EQ(read_pnm(dir / "c.pgm"), Tensor({1, 1, 2}, {0.0, 1.0}));
  write_text(dir / "p2.pgm", "P2\n1 1\n255\n0\n");
  EXPECT_THROW(read_pnm(dir / "p2.pgm"), DataError);
  write_text(dir / "short.pgm", "P5\n4 4\n255\nab");
  EXPECT_THROW(read_pnm(dir / "short.pgm"), DataError);
  write_text(dir / "deep.pgm", "P5\n1 1\n65535\nab");
  EXPECT_THROW(read_pnm(dir / "deep.pgm"), DataError);
}

TEST(Dataset, SaveLoadIsIdentity) {
  SynthConfig c;
  c.train_size = 30;
  c.val_size = 10;
  c.test_size = 10;
  c.seed = 9;
  const DatasetSplit d = generate_synthetic(c);
  TempDir dir("ds");
  save_dataset(dir.path(), d);
  EXPECT_EQ(infer_landmark_count(dir.path() / "train" / "landmarks.txt"), 4u);
  const DatasetSplit back = load_dataset(dir.path(), 4);
  EXPECT_EQ(back.spec, d.spec);
  for (auto [a, b] : {std::pair{&d.train, &back.train}, {&d.val, &back.val}, {&d.test, &back.test}}) {
    ASSERT_EQ(a->size(), b->size());
    for (std::size_t i = 0; i < a->size(); ++i) {
      EXPECT_EQ((*a)[i].id, (*b)[i].id);
      EXPECT_EQ((*a)[i].image, (*b)[i].image);
      EXPECT_EQ((*a)[i].labels, (*b)[i].labels);
      EXPECT_EQ((*a)[i].landmarks, (*b)[i].landmarks);
    }
  }
}

TEST(Dataset, ColumnsMapByName) {
  TempDir dir("cols");
  std::filesystem::create_directories(dir / "s" / "images");
  write_pnm(dir.path() / "s" / "images" / "a.pgm", Tensor({1, 2, 2}, 0.0));
  write_text(dir.path() / "s" / "list_attr.txt", "1\nB A\na.pgm -1 1\n");
  write_text(dir.path() / "s" / "landmarks.txt", "a.pgm 1 1\n");
  const AttributeSpec spec{{"A", "B"}, {AttributeGroup::objective, AttributeGroup::subjective}};
  const auto s = load_split_dir(dir.path() / "s", spec, 1);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].labels, (std::vector<double>{1.0, -1.0}));
  EXPECT_EQ(s[0].landmarks, (std::vector<double>{0.5, 0.5}));
  const AttributeSpec missing{{"A", "C"}, {AttributeGroup::objective, AttributeGroup::subjective}};
  EXPECT_THROW(load_split_dir(dir.path() / "s", missing, 1), DataError);
}

TEST(Batch, StacksSameShapeAndRejectsMixed) {
  SynthConfig c;
  c.train_size = 4;
  c.val_size = c.test_size = 0;
  DatasetSplit d = generate_synthetic(c);
  const Batch b = make_batch(d.train);
  EXPECT_EQ(b.images.shape(), (Shape{4, 1, 16, 16}));
  EXPECT_EQ(b.labels.shape(), (Shape{4, 6}));
  EXPECT_EQ(b.landmarks.shape(), (Shape{4, 8}));
  EXPECT_EQ(b.labels.at(2, 3), d.train[2].labels[3]);
  d.train[1].image = Tensor({1, 20, 20});
  EXPECT_THROW(make_batch(d.train), ShapeError);
}

TEST(Synthetic, SameSeedSameData) {
  SynthConfig c;
  c.train_size = 50;
  c.val_size = c.test_size = 5;
  const DatasetSplit a = generate_synthetic(c), b = generate_synthetic(c);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].image, b.train[i].image);
    EXPECT_EQ(a.train[i].labels, b.train[i].labels);
    EXPECT_EQ(a.train[i].landmarks, b.train[i].landmarks);
  }
  c.seed = 2;
  EXPECT_NE(generate_synthetic(c).train[0].image, a.train[0].image);
}

TEST(Synthetic, PositiveRatesWithinThreeSigma) {
  SynthConfig c;
  c.train_size = 1000;
  c.val_size = c.test_size = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    c.seed = seed;
    const DatasetSplit d = generate_synthetic(c);
    for (std::size_t j = 0; j < c.spec.size(); ++j) {
      const double rho = c.positive_rate[j];
      std::size_t pos = 0;
      for (const auto& s : d.train) pos += s.labels[j] > 0;
      const double sigma = std::sqrt(1000.0 * rho * (1.0 - rho));
      EXPECT_LE(std::abs(static_cast<double>(pos) - 1000.0 * rho), 3.0 * sigma) << c.spec.names[j] << " seed " << seed;
    }
  }
}

TEST(Synthetic, SamplesSatisfyInvariants) {
  SynthConfig c;
  c.train_size = 200;
  c.image_size = 24;
  c.landmarks = 8;
  const DatasetSplit d = generate_synthetic(c);
  EXPECT_EQ(d.val.size(), 500u);
  for (const auto& s : d.train) {
    EXPECT_EQ(s.image.shape(), (Shape{1, 24, 24}));
    EXPECT_EQ(s.landmarks.size(), 16u);
    for (double v : s.labels) EXPECT_TRUE(v == 1.0 || v == -1.0);
    for (double v : s.landmarks) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    for (double v : s.image.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Synthetic, ZeroDifficultyIsExactlyDecodable) {
  // Footprint mean against the midpoint of the two templates (0.9 painted,
  // ~0.04 background).
  SynthConfig c;
  c.train_size = 1000;
  c.val_size = c.test_size = 0;
  c.difficulty.assign(6, 0.0);
  const DatasetSplit d = generate_synthetic(c);
  for (std::size_t j = 0; j < 6; ++j) {
    std::size_t correct = 0;
    for (const auto& s : d.train) correct += (footprint_mean(s, j) > 0.45) == (s.labels[j] > 0);
    EXPECT_GE(correct, 990u) << c.spec.names[j];
  }

  // The default recipe keeps its zero-difficulty attributes perfectly separable.
  SynthConfig def;
  def.train_size = 1000;
  def.val_size = def.test_size = 0;
  const DatasetSplit dd = generate_synthetic(def);
  for (std::size_t j = 0; j < 6; ++j) {
    if (def.difficulty[j] != 0.0) continue;
    std::size_t correct = 0;
    for (const auto& s : dd.train) correct += (footprint_mean(s, j) > 0.45) == (s.labels[j] > 0);
    EXPECT_EQ(correct, 1000u) << def.spec.names[j];
  }
}

TEST(Synthetic, LandmarksCarryAttributeInformation) {
  SynthConfig c;
  c.train_size = 300;
  c.val_size = c.test_size = 0;
  const DatasetSplit d = generate_synthetic(c);
  const std::size_t nose = c.spec.index_of("Pointy_Nose");
  for (const auto& s : d.train) {
    // Nose sits 3 rows below the eyes, one more when the nose attribute is on.
    const double gap = (s.landmarks[5] - s.landmarks[1]) * 16.0;
    EXPECT_DOUBLE_EQ(gap, s.labels[nose] > 0 ? 4.0 : 3.0);
  }
}

TEST(Synthetic, ConfigValidation) {
  SynthConfig c;
  c.positive_rate[0] = 1.0;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c = {};
  c.difficulty.pop_back();
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c = {};
  c.image_size = 8;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c = {};
  c.landmarks = 9;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  bool has_rare = false;
  for (double r : SynthConfig{}.positive_rate) has_rare |= r <= 0.1;
  EXPECT_TRUE(has_rare);
}
