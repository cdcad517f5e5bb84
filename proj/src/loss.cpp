#include "divcot/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace divcot {

namespace {

long double cross_entropy_impl(const Tensor& logits, std::span<const LabelMap> labels, std::span<const Mask> mask,
                               LossResult* out) {
  if (logits.rank() != 4) throw ShapeError("cross entropy: logits must be NxCxHxW, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3), p = h * w;
  if (c < 2) throw std::invalid_argument("cross entropy: need at least 2 classes, got " + std::to_string(c));
  if (labels.size() != n) throw ShapeError("cross entropy: label batch size does not match logits");
  if (!mask.empty() && mask.size() != n) throw ShapeError("cross entropy: mask batch size does not match logits");
  for (std::size_t s = 0; s < n; ++s) {
    if (labels[s].height != static_cast<int>(h) || labels[s].width != static_cast<int>(w))
      throw ShapeError("cross entropy: label map does not match logits " + shape_str(logits.shape()));
    if (!mask.empty() && !mask[s].same_shape(labels[s])) throw ShapeError("cross entropy: mask does not match labels");
  }

  std::size_t valid = 0;
  if (out) out->grad = Tensor(logits.shape(), 0.0);
  long double total = 0.0L;
  std::vector<double> prob(c);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < p; ++i) {
      const std::uint8_t y = labels[s].data[i];
      if (y == kIgnoreLabel) continue;
      if (!mask.empty() && !mask[s].data[i]) continue;
      if (y >= c)
        throw std::invalid_argument("cross entropy: label " + std::to_string(y) + " out of range for " +
                                    std::to_string(c) + " classes");
      double mx = logits[(s * c) * p + i];
      for (std::size_t ch = 1; ch < c; ++ch) mx = std::max(mx, logits[(s * c + ch) * p + i]);
      double z = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        prob[ch] = std::exp(logits[(s * c + ch) * p + i] - mx);
        z += prob[ch];
      }
      total += std::log(static_cast<long double>(z)) + mx - logits[(s * c + y) * p + i];
      if (out)
        for (std::size_t ch = 0; ch < c; ++ch) out->grad[(s * c + ch) * p + i] = prob[ch] / z - (ch == y ? 1.0 : 0.0);
      ++valid;
    }
  if (valid == 0) return 0.0L;
  const long double loss = total / valid;
  if (out) {
    out->valid = valid;
    out->loss = static_cast<double>(loss);
    const double inv = 1.0 / static_cast<double>(valid);
    for (double& g : out->grad.values()) g *= inv;
  }
  return loss;
}

}  // namespace

LossResult pixel_cross_entropy(const Tensor& logits, std::span<const LabelMap> labels, std::span<const Mask> mask) {
  LossResult r;
  cross_entropy_impl(logits, labels, mask, &r);
  return r;
}

long double pixel_cross_entropy_value(const Tensor& logits, std::span<const LabelMap> labels,
                                      std::span<const Mask> mask) {
  return cross_entropy_impl(logits, labels, mask, nullptr);
}

}  // namespace divcot
