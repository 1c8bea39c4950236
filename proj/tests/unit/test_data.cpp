#include <doctest.h>

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "fmue/data.hpp"
#include "fmue/errors.hpp"
#include "fmue/image.hpp"
#include "fmue/synthetic.hpp"
#include "oracles.hpp"

using namespace fmue;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fmue_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

DatasetManifest one_class(const std::vector<int>& images_per_patient) {
  DatasetManifest m;
  m.class_vocabulary = {"a"};
  for (std::size_t p = 0; p < images_per_patient.size(); ++p)
    for (int i = 0; i < images_per_patient[p]; ++i)
      m.records.push_back({"p" + std::to_string(p) + "_" + std::to_string(i) + ".pgm", "a", "p" + std::to_string(p), "t", ""});
  return m;
}

}  // namespace

TEST_CASE("manifest parsing") {
  const std::string header = std::string(kManifestHeader) + "\n";
  auto m = parse_manifest(header + "a.pgm,normal,p1,s,\nb.pgm,dome,p2,s,dev\nc.pgm,ood:dense,p3,s,\n", {"normal", "dome"});
  CHECK(m.records.size() == 3);
  CHECK(m.class_index(m.records[1]) == 1);
  CHECK_FALSE(m.class_index(m.records[2]).has_value());

  try {
    parse_manifest(header + "a.pgm,normal,p1,s,\nb.pgm,cat,p2,s,\n", {"normal"});
    FAIL("unknown label accepted");
  } catch (const ParseError& e) {
    CHECK(e.row() == 2);
  }
  CHECK_THROWS_AS(parse_manifest(header + "a.pgm,normal,p1,s,\na.pgm,normal,p2,s,\n", {"normal"}), ParseError);
  CHECK_THROWS_AS(parse_manifest("image_path,label\na.pgm,normal\n", {"normal"}), ParseError);
  CHECK_THROWS_AS(parse_manifest(header, {"normal", "normal"}), ParseError);

  const std::vector<std::string> eleven{"normal", "amd", "cnv", "csc", "dme", "drusen", "erm", "mh", "rvo", "rd", "vmt"};
  auto big = parse_manifest(header + "x.pgm,vmt,p1,s,\n", eleven);
  CHECK(big.class_vocabulary.size() == 11);
}

TEST_CASE("manifest round trip") {
  const fs::path dir = scratch("manifest");
  DatasetManifest m;
  m.class_vocabulary = {"normal", "dome"};
  m.records = {{"img/a b.pgm", "dome", "p,1", "set", "dev"}, {"img/c.pgm", "normal", "p2", "set", ""}};
  write_manifest(dir / "m.csv", m);
  write_vocabulary(dir / "classes.txt", m.class_vocabulary);
  auto back = load_manifest(dir / "m.csv");
  CHECK(back.records == m.records);
  CHECK(back.class_vocabulary == m.class_vocabulary);
  CHECK(format_manifest(back) == format_manifest(m));
  CHECK(back.resolve(back.records[0]) == dir / "img/a b.pgm");
  CHECK_THROWS_AS(load_manifest(dir / "nope.csv"), IoError);
}

TEST_CASE("patient split sizes") {
  auto single = one_class({50});
  auto s1 = patient_split(single);
  CHECK(s1.image_counts(single) == std::array<std::size_t, 3>{50, 0, 0});
  CHECK_FALSE(s1.warnings.empty());

  auto ten = one_class(std::vector<int>(10, 10));
  CHECK(patient_split(ten, {{6, 2, 2}, 4}).image_counts(ten) == std::array<std::size_t, 3>{60, 20, 20});

  SplitOptions bad;
  bad.ratios = {6, 0, 2};
  CHECK_THROWS_AS(patient_split(ten, bad), ConfigError);
}

TEST_CASE("patient split ratios over many patients") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> n(1, 12);
  std::vector<int> sizes(1000);
  for (int& v : sizes) v = n(rng);
  auto m = one_class(sizes);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = patient_split(m, {{6, 2, 2}, seed});
    auto c = s.image_counts(m);
    const double total = static_cast<double>(m.records.size());
    CHECK(std::abs(c[0] / total - 0.6) <= 0.03);
    CHECK(std::abs(c[1] / total - 0.2) <= 0.03);
    CHECK(std::abs(c[2] / total - 0.2) <= 0.03);
  }
}

TEST_CASE("split determinism and no leakage") {
  auto out = generate_synthetic_images(SyntheticSpec::default_spec(), 3);
  DatasetManifest m;
  m.class_vocabulary = out.class_vocabulary;
  for (auto& s : out.in_distribution) m.records.push_back(s.record);
  auto a = patient_split(m, {{6, 2, 2}, 5});
  auto b = patient_split(m, {{6, 2, 2}, 5});
  CHECK(a.patients == b.patients);
  std::map<std::string, std::set<Split>> seen;
  for (Split sp : {Split::Train, Split::Val, Split::Test})
    for (auto& r : subset(m, a, sp).records) seen[r.patient_id].insert(sp);
  for (auto& [pid, splits] : seen) CHECK_MESSAGE(splits.size() == 1, pid);
  // Every class reaches every split.
  for (Split sp : {Split::Train, Split::Val, Split::Test}) {
    std::set<std::string> labels;
    for (auto& r : subset(m, a, sp).records) labels.insert(r.label);
    CHECK(labels.size() == 4);
  }
}

TEST_CASE("preprocessing") {
  ImageArray gray(1, 10, 12, 0.5);
  auto z = preprocess(gray, PreprocessConfig{});
  CHECK(z.channels == 3);
  CHECK(z.height == 64);
  for (double v : z.data) CHECK(v == 0.0);

  ImageArray big(1, 496, 512, 0.2);
  auto p = preprocess(big, PreprocessConfig{});
  CHECK(p.channels == 3);
  CHECK(p.height == 64);
  CHECK(p.width == 64);

  ImageArray checker(1, 16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) checker.at(0, y, x) = ((x / 2 + y / 2) % 2) ? 1.0 : 0.0;
  for (auto [h, w] : std::vector<std::pair<int, int>>{{64, 64}, {10, 7}, {33, 50}}) {
    auto got = resize_bilinear(checker, h, w);
    auto want = oracle::reference_resize(checker, h, w);
    double worst = 0.0;
    for (std::size_t i = 0; i < got.data.size(); ++i) worst = std::max(worst, std::abs(got.data[i] - want.data[i]));
    CHECK(worst <= 1e-3);
  }

  const fs::path dir = scratch("pre");
  std::ofstream(dir / "junk.pgm") << "not an image";
  try {
    preprocess_file(dir / "junk.pgm", PreprocessConfig{});
    FAIL("decoded junk");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("junk.pgm") != std::string::npos);
  }
}

TEST_CASE("pnm round trip") {
  const fs::path dir = scratch("pnm");
  ImageArray img(1, 3, 4);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = i / 11.0;
  write_pnm(dir / "a.pgm", img);
  auto back = read_pnm(dir / "a.pgm");
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5 / 255 + 1e-12);
  std::ofstream(dir / "b.pgm") << "P2\n2 1\n255\n0 255\n";
  auto ascii = read_pnm(dir / "b.pgm");
  CHECK(ascii.data == std::vector<double>{0.0, 1.0});
}

TEST_CASE("synthetic generator") {
  const fs::path dir = scratch("synth");
  auto spec = SyntheticSpec::default_spec();
  auto out = generate_synthetic(spec, 1, dir);
  CHECK(out.manifest.records.size() == 200);
  CHECK(out.ood_manifest.records.size() == 100);
  CHECK(fs::exists(dir / "classes.txt"));
  CHECK(read_regions(dir / "regions.csv").size() == 150);  // every distorted image carries a box

  spec.noise_sigma = 0.0;
  auto a = generate_synthetic_images(spec, 8), b = generate_synthetic_images(spec, 8);
  CHECK(a.in_distribution[17].image == b.in_distribution[17].image);
  CHECK(a.ood[3].image == b.ood[3].image);

  CHECK_THROWS_AS(parse_synthetic_spec("samples_per_class=-3\n"), ConfigError);
  CHECK_THROWS_AS(parse_synthetic_spec("class=a:5:none\nclass=b:5:none\n"), ConfigError);
  CHECK_THROWS_AS(parse_synthetic_spec("class=a:5:none\nclass=b:5:dome\nood=c:5:none\n"), ConfigError);
}

TEST_CASE("raw pixels are linearly separable across held-out patients") {
  auto out = generate_synthetic_images(SyntheticSpec::default_spec(), 7);
  DatasetManifest m;
  m.class_vocabulary = out.class_vocabulary;
  for (auto& s : out.in_distribution) m.records.push_back(s.record);
  auto split = patient_split(m, {{8, 0.01, 2}, 0});

  // Softmax regression on 16x16 downsampled pixels, plain gradient descent.
  const int d = 16 * 16 + 1, k = 4;
  std::vector<Eigen::VectorXd> xs;
  std::vector<int> ys;
  std::vector<bool> is_test;
  for (auto& s : out.in_distribution) {
    auto small = resize_bilinear(s.image, 16, 16);
    Eigen::VectorXd x(d);
    for (int i = 0; i < d - 1; ++i) x[i] = small.data[i] - 0.5;
    x[d - 1] = 1.0;
    xs.push_back(x);
    ys.push_back(*m.class_index(s.record));
    is_test.push_back(split.patients.at(s.record.patient_id) != Split::Train);
  }
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(k, d);
  for (int it = 0; it < 600; ++it) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(k, d);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (is_test[i]) continue;
      Eigen::VectorXd z = w * xs[i];
      z = (z.array() - z.maxCoeff()).exp();
      z /= z.sum();
      z[ys[i]] -= 1.0;
      g += z * xs[i].transpose();
    }
    w -= 0.05 * g / static_cast<double>(xs.size()) + 1e-4 * w;
  }
  int right = 0, total = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!is_test[i]) continue;
    Eigen::Index arg;
    (w * xs[i]).maxCoeff(&arg);
    right += arg == ys[i];
    ++total;
  }
  CHECK(total >= 20);
  CHECK(static_cast<double>(right) / total > 0.9);
}
