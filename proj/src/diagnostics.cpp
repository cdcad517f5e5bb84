#include "divcot/diagnostics.hpp"

#include <cmath>
#include <stdexcept>

#include "divcot/layers.hpp"

namespace divcot {

std::vector<LabelMap> argmax_labels(const Tensor& logits) {
  if (logits.rank() != 4) throw ShapeError("argmax_labels: expected NxCxHxW, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3), p = h * w;
  std::vector<LabelMap> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    LabelMap m(static_cast<int>(h), static_cast<int>(w), 0);
    for (std::size_t i = 0; i < p; ++i) {
      std::size_t best = 0;
      double bv = logits[s * c * p + i];
      for (std::size_t ch = 1; ch < c; ++ch)
        if (logits[(s * c + ch) * p + i] > bv) bv = logits[(s * c + ch) * p + i], best = ch;
      m.data[i] = static_cast<std::uint8_t>(best);
    }
    out.push_back(std::move(m));
  }
  return out;
}

double agree_rate(std::span<const LabelMap> a, std::span<const LabelMap> b) {
  if (a.size() != b.size()) throw ShapeError("agree_rate: batch sizes differ");
  std::size_t same = 0, total = 0;
  for (std::size_t s = 0; s < a.size(); ++s) {
    if (!a[s].same_shape(b[s])) throw ShapeError("agree_rate: label maps differ in shape");
    for (std::size_t i = 0; i < a[s].size(); ++i) {
      if (a[s].data[i] == kIgnoreLabel || b[s].data[i] == kIgnoreLabel) continue;
      ++total;
      same += a[s].data[i] == b[s].data[i];
    }
  }
  if (total == 0) throw std::invalid_argument("agree_rate: no comparable pixels");
  return static_cast<double>(same) / static_cast<double>(total);
}

double agree_rate(const LabelMap& a, const LabelMap& b) { return agree_rate(std::span(&a, 1), std::span(&b, 1)); }

double l2_logit_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("l2_logit_distance: shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.empty()) throw ShapeError("l2_logit_distance: empty input");
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return static_cast<double>(s / a.size());
}

double kl_divergence(const Tensor& s1, const Tensor& s2) {
  if (s1.shape() != s2.shape() || s1.rank() != 4)
    throw ShapeError("kl_divergence: expected equal NxCxHxW shapes, got " + shape_str(s1.shape()) + " vs " +
                     shape_str(s2.shape()));
  const std::size_t n = s1.dim(0), c = s1.dim(1), p = s1.dim(2) * s1.dim(3);
  long double total = 0.0L;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < p; ++i) {
      double sum1 = 0.0, sum2 = 0.0, term = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double a = s1[(s * c + ch) * p + i], b = s2[(s * c + ch) * p + i];
        if (a < 0.0 || b < 0.0) throw std::invalid_argument("kl_divergence: negative probability");
        sum1 += a;
        sum2 += b;
        if (a > 0.0) term += a * std::log(a / std::max(b, 1e-12));
      }
      if (std::abs(sum1 - 1.0) > 1e-6 || std::abs(sum2 - 1.0) > 1e-6)
        throw std::invalid_argument("kl_divergence: rows must sum to 1");
      total += term;
    }
  return static_cast<double>(total / (n * p));
}

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
  if (classes < 1) throw std::invalid_argument("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(classes) * classes, 0);
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt) {
  if (!pred.same_shape(gt)) throw ShapeError("miou: prediction and ground truth differ in shape");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = gt.data[i], p = pred.data[i];
    if (g == kIgnoreLabel) continue;
    if (g >= classes_ || p >= classes_)
      throw std::invalid_argument("miou: class id " + std::to_string(std::max(g, p)) + " out of range for " +
                                  std::to_string(classes_) + " classes");
    ++counts_[static_cast<std::size_t>(g) * classes_ + p];
  }
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (auto v : counts_) t += v;
  return t;
}

MiouResult miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::invalid_argument("miou: no valid pixels");
  const int k = cm.classes();
  MiouResult r;
  r.iou.assign(static_cast<std::size_t>(k), 0.0);
  r.present.assign(static_cast<std::size_t>(k), false);
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < k; ++c) {
    std::size_t tp = cm.at(c, c), row = 0, col = 0;
    for (int o = 0; o < k; ++o) {
      row += cm.at(c, o);
      col += cm.at(o, c);
    }
    const std::size_t uni = row + col - tp;
    if (uni == 0) continue;
    r.present[static_cast<std::size_t>(c)] = true;
    r.iou[static_cast<std::size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
    sum += r.iou[static_cast<std::size_t>(c)];
    ++used;
  }
  r.mean = sum / used;
  return r;
}

MiouResult miou(std::span<const LabelMap> preds, std::span<const LabelMap> gts, int classes) {
  if (preds.size() != gts.size()) throw ShapeError("miou: batch sizes differ");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < preds.size(); ++i) cm.add(preds[i], gts[i]);
  return miou(cm);
}

std::vector<DiversityReport> diversity_trace(std::span<const Tensor> logits, int epoch) {
  std::vector<DiversityReport> out;
  std::vector<std::vector<LabelMap>> preds;
  std::vector<Tensor> soft;
  for (const Tensor& l : logits) {
    preds.push_back(argmax_labels(l));
    soft.push_back(softmax_channels(l));
  }
  for (std::size_t a = 0; a < logits.size(); ++a)
    for (std::size_t b = a + 1; b < logits.size(); ++b) {
      DiversityReport r;
      r.epoch = epoch;
      r.model_a = a;
      r.model_b = b;
      r.agree_rate = agree_rate(preds[a], preds[b]);
      r.d_l2 = l2_logit_distance(logits[a], logits[b]);
      r.d_kl = kl_divergence(soft[a], soft[b]);
      out.push_back(r);
    }
  return out;
}

}  // namespace divcot
