#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "divcot/network.hpp"
#include "divcot/tensor.hpp"

namespace divcot {

struct GenerateOptions {
  std::uint64_t seed = 0;
  int count = 0;
  int size = 64;
  int classes = 4;
  /// Samples at the end of the id range held out for evaluation; -1 picks count/6.
  int val_count = -1;
  /// Spread of per-shape hue around the class base hue (fraction of the colour wheel).
  double hue_jitter = 0.12;
  double noise_sigma = 0.05;
};

struct Sample {
  int id = 0;
  Tensor image;  // 3 x S x S RGB in [0,1]
  LabelMap mask;
};

/// Per-channel mean/std of the train split in each input domain.
struct ChannelStats {
  std::vector<double> mean, std;
};

struct Normalization {
  ChannelStats rgb, hsv, dct;
  const ChannelStats& of(Domain d) const;
};

struct Dataset {
  std::string root;
  GenerateOptions options;
  std::vector<Sample> samples;
  std::vector<int> train_ids, val_ids;
  Normalization norm;
  std::string content_hash;

  const Sample& sample(int id) const { return samples.at(static_cast<std::size_t>(id)); }
};

/// One synthetic image and mask, a pure function of (options, id).
Sample generate_sample(const GenerateOptions& opt, int id);

/// Generates every sample in memory, with stats and content hash (no disk I/O).
Dataset generate_dataset(const GenerateOptions& opt);

/// Generates and writes images/, masks/ and manifest.json under `root`.
Dataset generate_dataset(const GenerateOptions& opt, const std::string& root);

Dataset load_dataset(const std::string& root);

/// Recomputes the dataset from the manifest parameters; true when files and hash match.
struct VerifyResult {
  bool ok = false;
  std::string expected_hash, actual_hash;
  std::vector<std::string> problems;
};
VerifyResult verify_dataset(const std::string& root);

/// FNV-1a over the encoded image and mask bytes, in id order.
std::string content_hash(const std::vector<Sample>& samples);

Normalization compute_normalization(const std::vector<Sample>& samples, const std::vector<int>& ids);

/// RGB image in [0,1] -> normalized network input for `domain`.
Tensor to_domain_input(const Tensor& rgb, Domain domain, const Normalization& norm);

struct Partition {
  std::vector<int> labeled, unlabeled;
  std::string ratio_tag;
  std::uint64_t split_seed = 0;
};

/// "1/16", "0.25" or "1" -> ratio in (0,1].
double parse_ratio(const std::string& tag);
std::string ratio_tag(double ratio);

/// Seeded shuffle and prefix split of the train ids, redrawn until every class
/// present in the train split appears in the labeled part.
Partition make_partition(const Dataset& ds, double ratio, std::uint64_t split_seed);

}  // namespace divcot
