#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "divcot/tensor.hpp"

namespace divcot {

/// Per-pixel argmax over channels (lowest index wins ties), one map per sample.
std::vector<LabelMap> argmax_labels(const Tensor& logits);

/// Fraction of pixels with equal ids; pixels where either map is ignore are skipped.
double agree_rate(const LabelMap& a, const LabelMap& b);
double agree_rate(std::span<const LabelMap> a, std::span<const LabelMap> b);

/// Mean absolute elementwise logit difference over N*C*H*W.
double l2_logit_distance(const Tensor& a, const Tensor& b);

/// Mean over pixels of sum_c s1*ln(s1/s2); s1 = 0 terms are 0 and s2 is floored at 1e-12.
double kl_divergence(const Tensor& s1, const Tensor& s2);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);

  /// Adds every pixel whose ground truth is not ignore.
  void add(const LabelMap& pred, const LabelMap& gt);

  int classes() const { return classes_; }
  std::size_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * classes_ + pred]; }
  std::size_t total() const;

 private:
  int classes_;
  std::vector<std::size_t> counts_;
};

struct MiouResult {
  std::vector<double> iou;       // per class; 0 for absent classes
  std::vector<bool> present;     // class occurs in prediction or ground truth
  double mean = 0.0;             // over present classes
};

MiouResult miou(const ConfusionMatrix& cm);
MiouResult miou(std::span<const LabelMap> preds, std::span<const LabelMap> gts, int classes);

struct DiversityReport {
  int epoch = 0;
  std::size_t model_a = 0, model_b = 0;
  double agree_rate = 0.0;
  double d_l2 = 0.0;
  double d_kl = 0.0;
  /// 1 - agree_rate, the disagreement fed to the bound.
  double disagreement() const { return 1.0 - agree_rate; }
};

/// Metrics for every unordered model pair from logits on the same clean views.
std::vector<DiversityReport> diversity_trace(std::span<const Tensor> logits_per_model, int epoch);

}  // namespace divcot
