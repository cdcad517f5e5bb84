#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <set>

#include "divcot/dataset.hpp"
#include "divcot/image_io.hpp"
#include "test_util.hpp"

using namespace divcot;
using divcot::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

GenerateOptions small(std::uint64_t seed, int count) {
  GenerateOptions o;
  o.seed = seed;
  o.count = count;
  o.size = 32;
  return o;
}

const Dataset& shared_320() {
  static const Dataset ds = [] {
    GenerateOptions o = small(11, 384);
    o.val_count = 64;
    return generate_dataset(o);
  }();
  return ds;
}

}  // namespace

TEST(Generate, EmptyDatasetWritesValidManifest) {
  TempDir dir("gen_empty");
  const Dataset ds = generate_dataset(small(1, 0), dir.str());
  EXPECT_TRUE(ds.samples.empty());
  const auto j = nlohmann::json::parse(slurp(dir.path() / "manifest.json"));
  EXPECT_EQ(j.at("count"), 0);
  EXPECT_TRUE(j.at("samples").empty());
  const Dataset back = load_dataset(dir.str());
  EXPECT_TRUE(back.samples.empty());
  EXPECT_TRUE(verify_dataset(dir.str()).ok);
}

TEST(Generate, SameSeedGivesIdenticalFiles) {
  TempDir a("gen_a"), b("gen_b");
  generate_dataset(small(7, 6), a.str());
  generate_dataset(small(7, 6), b.str());
  for (const auto& e : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), a.path());
    EXPECT_EQ(slurp(e.path()), slurp(b.path() / rel)) << rel;
  }
}

TEST(Generate, DifferentSeedsDiffer) {
  EXPECT_NE(generate_dataset(small(1, 3)).content_hash, generate_dataset(small(2, 3)).content_hash);
}

TEST(Generate, SampleIsPureFunctionOfId) {
  const GenerateOptions o = small(5, 10);
  const Dataset ds = generate_dataset(o);
  const Sample s = generate_sample(o, 7);
  EXPECT_EQ(s.image, ds.sample(7).image);
  EXPECT_EQ(s.mask.data, ds.sample(7).mask.data);
}

TEST(Generate, ShapeFractionWithinBoundsOver1000Samples) {
  GenerateOptions o = small(123, 1000);
  o.size = 64;
  int multi = 0;
  for (int id = 0; id < o.count; ++id) {
    const Sample s = generate_sample(o, id);
    std::size_t fg = 0;
    std::set<int> kinds;
    for (auto v : s.mask.data) {
      fg += v != 0;
      if (v) kinds.insert(v);
    }
    const double frac = static_cast<double>(fg) / static_cast<double>(s.mask.data.size());
    ASSERT_GE(frac, 0.05) << id;
    ASSERT_LE(frac, 0.6) << id;
    multi += kinds.size() > 1;
  }
  EXPECT_GT(multi, 100);
}

TEST(Generate, MasksHoldOnlyValidClassIds) {
  for (int classes : {2, 4, 8}) {
    GenerateOptions o = small(9, 40);
    o.classes = classes;
    std::set<int> seen;
    for (const Sample& s : generate_dataset(o).samples) {
      ASSERT_EQ(s.image.dim(1), 32u);
      ASSERT_EQ(s.mask.height, 32);
      for (auto v : s.mask.data) {
        ASSERT_LT(v, classes);
        seen.insert(v);
      }
    }
    EXPECT_EQ(static_cast<int>(seen.size()), classes);
  }
}

TEST(Generate, ImagesAreByteQuantized) {
  const Sample s = generate_sample(small(3, 1), 0);
  for (double v : s.image.values()) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    ASSERT_NEAR(v * 255.0, std::round(v * 255.0), 1e-9);
  }
}

TEST(Generate, RejectsBadOptions) {
  GenerateOptions o = small(1, 1);
  o.classes = 9;
  EXPECT_THROW(generate_dataset(o), std::invalid_argument);
  o.classes = 1;
  EXPECT_THROW(generate_dataset(o), std::invalid_argument);
  o = small(1, 1);
  o.size = 48;
  EXPECT_THROW(generate_dataset(o), std::invalid_argument);
}

TEST(Generate, ValSplitIsTail) {
  const Dataset ds = generate_dataset(small(4, 12));
  ASSERT_EQ(ds.val_ids.size(), 2u);
  EXPECT_EQ(ds.val_ids, (std::vector<int>{10, 11}));
  EXPECT_EQ(ds.train_ids.size(), 10u);
}

TEST(Generate, LoadRoundTripsSamplesAndStats) {
  TempDir dir("gen_load");
  const Dataset ds = generate_dataset(small(8, 8), dir.str());
  const Dataset back = load_dataset(dir.str());
  ASSERT_EQ(back.samples.size(), ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].image, ds.samples[i].image);
    EXPECT_EQ(back.samples[i].mask.data, ds.samples[i].mask.data);
  }
  EXPECT_EQ(back.norm.dct.mean, ds.norm.dct.mean);
  EXPECT_EQ(back.norm.rgb.std, ds.norm.rgb.std);
  EXPECT_EQ(back.content_hash, ds.content_hash);
}

TEST(Generate, LoadMissingRootNamesPath) {
  try {
    load_dataset("/nonexistent/divcot_ds");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/divcot_ds"), std::string::npos);
  }
}

TEST(Verify, DetectsTamperedFile) {
  TempDir dir("gen_verify");
  generate_dataset(small(21, 4), dir.str());
  EXPECT_TRUE(verify_dataset(dir.str()).ok);
  const auto img = dir.path() / "images" / "000002.ppm";
  std::string bytes = slurp(img);
  bytes.back() = static_cast<char>(bytes.back() ^ 0x01);
  spit(img, bytes);
  const VerifyResult r = verify_dataset(dir.str());
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.actual_hash, r.expected_hash);
}

TEST(Normalization, MatchesDirectComputation) {
  const Dataset ds = generate_dataset(small(2, 6));
  for (std::size_t c = 0; c < 3; ++c) {
    long double sum = 0, sq = 0;
    double n = 0;
    for (int id : ds.train_ids) {
      const Tensor& img = ds.sample(id).image;
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
          sum += img.at(c, y, x);
          sq += img.at(c, y, x) * img.at(c, y, x);
          n += 1;
        }
    }
    const double mean = static_cast<double>(sum / n);
    EXPECT_NEAR(ds.norm.rgb.mean[c], mean, 1e-12);
    EXPECT_NEAR(ds.norm.rgb.std[c], std::sqrt(static_cast<double>(sq / n) - mean * mean), 1e-9);
  }
  EXPECT_EQ(ds.norm.dct.mean.size(), 64u);
  EXPECT_EQ(ds.norm.hsv.mean.size(), 3u);
}

TEST(Normalization, DomainInputsAreStandardizedOnTrainSplit) {
  const Dataset ds = generate_dataset(small(2, 24));
  for (Domain d : {Domain::Rgb, Domain::Hsv, Domain::Dct}) {
    std::vector<long double> sum, sq;
    double n = 0;
    for (int id : ds.train_ids) {
      const Tensor x = to_domain_input(ds.sample(id).image, d, ds.norm);
      const std::size_t c = x.dim(0), p = x.dim(1) * x.dim(2);
      sum.resize(c);
      sq.resize(c);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < p; ++i) {
          sum[ch] += x[ch * p + i];
          sq[ch] += x[ch * p + i] * x[ch * p + i];
        }
      n += static_cast<double>(p);
    }
    for (std::size_t ch = 0; ch < sum.size(); ++ch) {
      EXPECT_NEAR(static_cast<double>(sum[ch] / n), 0.0, 1e-9) << to_string(d) << ch;
      const double var = static_cast<double>(sq[ch] / n);
      if (ds.norm.of(d).std[ch] != 1.0) EXPECT_NEAR(var, 1.0, 1e-6) << to_string(d) << ch;
    }
  }
}

TEST(Partition, FullRatioLabelsEverything) {
  const Dataset& ds = shared_320();
  const Partition p = make_partition(ds, 1.0, 3);
  EXPECT_EQ(p.labeled.size(), 320u);
  EXPECT_TRUE(p.unlabeled.empty());
  EXPECT_EQ(p.ratio_tag, "1");
}

TEST(Partition, SixteenthOf320Is20) {
  const Partition p = make_partition(shared_320(), parse_ratio("1/16"), 3);
  EXPECT_EQ(p.labeled.size(), 20u);
  EXPECT_EQ(p.unlabeled.size(), 300u);
  EXPECT_EQ(p.ratio_tag, "1/16");
}

TEST(Partition, DisjointUnionIsTrainSplit) {
  const Dataset& ds = shared_320();
  for (const char* tag : {"1/2", "1/8", "1/16", "0.3"}) {
    const Partition p = make_partition(ds, parse_ratio(tag), 17);
    std::set<int> l(p.labeled.begin(), p.labeled.end()), u(p.unlabeled.begin(), p.unlabeled.end());
    EXPECT_EQ(l.size(), p.labeled.size());
    for (int id : l) EXPECT_EQ(u.count(id), 0u);
    std::set<int> all = l;
    all.insert(u.begin(), u.end());
    EXPECT_EQ(all, std::set<int>(ds.train_ids.begin(), ds.train_ids.end()));
    EXPECT_EQ(p.labeled.size(), static_cast<std::size_t>(std::llround(320 * parse_ratio(tag))));
  }
}

TEST(Partition, LabeledSetCoversEveryClass) {
  const Dataset& ds = shared_320();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Partition p = make_partition(ds, 1.0 / 64.0, seed);
    std::set<int> seen;
    for (int id : p.labeled)
      for (auto v : ds.sample(id).mask.data) seen.insert(v);
    EXPECT_EQ(seen.size(), 4u);
  }
}

TEST(Partition, UncoverableClassesFail) {
  Dataset ds = generate_dataset(small(2, 8));
  for (auto& s : ds.samples) std::fill(s.mask.data.begin(), s.mask.data.end(), 0);
  ds.samples[ds.train_ids[0]].mask.data[0] = 1;
  ds.samples[ds.train_ids[1]].mask.data[0] = 2;
  // One labeled image cannot carry classes 1 and 2 held by different images.
  EXPECT_THROW(make_partition(ds, 1.0 / 8.0, 0), std::runtime_error);
}

TEST(Partition, SeedPairOverlapMatchesHypergeometricMean) {
  const Dataset& ds = shared_320();
  const double n = 320, k = 20;
  const double expected = k * k / n;
  const double var = k * (k / n) * ((n - k) / n) * ((n - k) / (n - 1));
  double total = 0;
  int identical = 0;
  for (std::uint64_t pair = 0; pair < 100; ++pair) {
    const Partition a = make_partition(ds, k / n, 1000 + 2 * pair);
    const Partition b = make_partition(ds, k / n, 1001 + 2 * pair);
    std::set<int> sa(a.labeled.begin(), a.labeled.end());
    int overlap = 0;
    for (int id : b.labeled) overlap += static_cast<int>(sa.count(id));
    total += overlap;
    identical += overlap == static_cast<int>(k);
  }
  EXPECT_EQ(identical, 0);
  EXPECT_NEAR(total / 100.0, expected, 4.0 * std::sqrt(var / 100.0));
}

TEST(Partition, Deterministic) {
  const Partition a = make_partition(shared_320(), 0.125, 5), b = make_partition(shared_320(), 0.125, 5);
  EXPECT_EQ(a.labeled, b.labeled);
  EXPECT_EQ(a.unlabeled, b.unlabeled);
}

TEST(Partition, RatioParsing) {
  EXPECT_DOUBLE_EQ(parse_ratio("1/16"), 0.0625);
  EXPECT_DOUBLE_EQ(parse_ratio("0.25"), 0.25);
  EXPECT_DOUBLE_EQ(parse_ratio("1"), 1.0);
  EXPECT_EQ(ratio_tag(0.0625), "1/16");
  EXPECT_EQ(ratio_tag(0.3), "0.3");
  for (const char* bad : {"0", "2", "1/0", "x", "1/16x", "-0.5"}) EXPECT_THROW(parse_ratio(bad), std::invalid_argument) << bad;
  EXPECT_THROW(make_partition(shared_320(), 0.0, 1), std::invalid_argument);
}

TEST(ImageIo, WhitePixelPpmBytes) {
  TempDir dir("io_white");
  Tensor px({3, 1, 1}, std::vector<double>{1.0, 1.0, 1.0});
  write_ppm((dir.path() / "w.ppm").string(), px);
  EXPECT_EQ(slurp(dir.path() / "w.ppm"), std::string("P6\n1 1\n255\n\xFF\xFF\xFF", 14));
  EXPECT_EQ(encode_ppm(px), std::string("P6\n1 1\n255\n\xFF\xFF\xFF", 14));
}

TEST(ImageIo, RandomImageRoundTripIsExact) {
  TempDir dir("io_rt");
  Tensor img = divcot::testing::random_tensor({3, 7, 5}, 4, 0.0, 1.0);
  for (double& v : img.values()) v = std::round(v * 255.0) / 255.0;
  const auto p = (dir.path() / "r.ppm").string();
  write_ppm(p, img);
  EXPECT_EQ(read_ppm(p), img);
}

TEST(ImageIo, MaskIgnoreValueRoundTrips) {
  TempDir dir("io_mask");
  LabelMap m = divcot::testing::random_labels(6, 9, 4, 3);
  m(0, 0) = kIgnoreLabel;
  m(5, 8) = kIgnoreLabel;
  const auto p = (dir.path() / "m.pgm").string();
  write_pgm(p, m);
  const LabelMap back = read_pgm(p);
  EXPECT_EQ(back.data, m.data);
  EXPECT_EQ(back(0, 0), 255);
}

TEST(ImageIo, MalformedHeaderReportsByteOffset) {
  TempDir dir("io_bad");
  const auto p = dir.path() / "bad.ppm";
  spit(p, "P6\n4 x\n255\n");
  try {
    read_ppm(p.string());
    FAIL();
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(p.string()), std::string::npos);
    EXPECT_NE(msg.find("at byte 5"), std::string::npos) << msg;
  }
  spit(p, "P5\n1 1\n255\n\x01");
  EXPECT_THROW(read_ppm(p.string()), std::runtime_error);
  spit(p, "P6\n2 2\n255\n\x01\x02");
  EXPECT_THROW(read_ppm(p.string()), std::runtime_error);
}
