#pragma once

// Brute-force reference implementations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "divcot/tensor.hpp"

namespace divcot::oracle {

inline double softmax_at(const Tensor& logits, std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
  double z = 0.0;
  for (std::size_t k = 0; k < logits.dim(1); ++k) z += std::exp(logits.at(n, k, y, x));
  return std::exp(logits.at(n, c, y, x)) / z;
}

inline double cross_entropy(const Tensor& logits, const std::vector<LabelMap>& labels) {
  double total = 0.0;
  int valid = 0;
  for (std::size_t n = 0; n < logits.dim(0); ++n)
    for (std::size_t y = 0; y < logits.dim(2); ++y)
      for (std::size_t x = 0; x < logits.dim(3); ++x) {
        const int t = labels[n](static_cast<int>(y), static_cast<int>(x));
        if (t == kIgnoreLabel) continue;
        total += -std::log(softmax_at(logits, n, static_cast<std::size_t>(t), y, x));
        ++valid;
      }
  return valid ? total / valid : 0.0;
}

inline double kl(const Tensor& p, const Tensor& q) {
  double total = 0.0;
  for (std::size_t n = 0; n < p.dim(0); ++n)
    for (std::size_t y = 0; y < p.dim(2); ++y)
      for (std::size_t x = 0; x < p.dim(3); ++x)
        for (std::size_t c = 0; c < p.dim(1); ++c) {
          const double a = p.at(n, c, y, x), b = q.at(n, c, y, x);
          if (a > 0) total += a * (std::log(a) - std::log(std::max(b, 1e-12)));
        }
  return total / static_cast<double>(p.dim(0) * p.dim(2) * p.dim(3));
}

inline double l2(const Tensor& a, const Tensor& b) {
  double total = 0.0;
  for (std::size_t n = 0; n < a.dim(0); ++n)
    for (std::size_t c = 0; c < a.dim(1); ++c)
      for (std::size_t y = 0; y < a.dim(2); ++y)
        for (std::size_t x = 0; x < a.dim(3); ++x) total += std::fabs(a.at(n, c, y, x) - b.at(n, c, y, x));
  return total / static_cast<double>(a.size());
}

inline double agree(const std::vector<LabelMap>& a, const std::vector<LabelMap>& b) {
  // 1 - normalized Hamming distance over comparable pixels.
  double diff = 0, total = 0;
  for (std::size_t s = 0; s < a.size(); ++s)
    for (int y = 0; y < a[s].height; ++y)
      for (int x = 0; x < a[s].width; ++x) {
        if (a[s](y, x) == kIgnoreLabel || b[s](y, x) == kIgnoreLabel) continue;
        total += 1;
        diff += a[s](y, x) != b[s](y, x);
      }
  return 1.0 - diff / total;
}

inline double mean_iou(const std::vector<LabelMap>& pred, const std::vector<LabelMap>& gt, int classes) {
  // Set-based IoU per class, straight from the definition.
  double sum = 0;
  int used = 0;
  for (int c = 0; c < classes; ++c) {
    double inter = 0, uni = 0;
    for (std::size_t s = 0; s < gt.size(); ++s)
      for (std::size_t i = 0; i < gt[s].size(); ++i) {
        if (gt[s].data[i] == kIgnoreLabel) continue;
        const bool p = pred[s].data[i] == c, g = gt[s].data[i] == c;
        inter += p && g;
        uni += p || g;
      }
    if (uni > 0) {
      sum += inter / uni;
      ++used;
    }
  }
  return sum / used;
}

}  // namespace divcot::oracle
