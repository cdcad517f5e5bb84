#pragma once

#include <span>

#include "divcot/params.hpp"
#include "divcot/tensor.hpp"

namespace divcot {

struct LossResult {
  double loss = 0.0;
  Tensor grad;
  /// Pixels that contributed (mask true and label != ignore).
  std::size_t valid = 0;
};

/// Mean softmax cross entropy over valid pixels of an NxCxHxW logit batch.
/// `labels[n]` and `mask[n]` are HxW; an empty `mask` means every pixel is
/// eligible. Gradient is (softmax - onehot) / valid; zero when valid == 0.
LossResult pixel_cross_entropy(const Tensor& logits, std::span<const LabelMap> labels,
                               std::span<const Mask> mask = {});

/// Loss value only, accumulated in extended precision (for finite differences).
long double pixel_cross_entropy_value(const Tensor& logits, std::span<const LabelMap> labels,
                                      std::span<const Mask> mask = {});

}  // namespace divcot
