#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "divcot/params.hpp"
#include "divcot/tensor.hpp"

namespace divcot {

/// What a layer keeps from its forward pass for the backward pass.
struct LayerCache {
  Shape input_shape;
  Tensor input;
  Tensor aux;
  std::vector<double> stats;
};

/// 3x3 convolution, zero padding 1, stride 1 or 2. Weight O x (C*9), bias O.
struct Conv3x3 {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t weight = 0;
  std::size_t bias = 0;
};

/// Per-position dense map over the channel axis (a 1x1 convolution).
struct Dense {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  std::size_t weight = 0;
  std::size_t bias = 0;
};

/// Dense map over the token (spatial) axis, shared across channels.
struct TokenMix {
  std::size_t tokens = 0;
  std::size_t weight = 0;
  std::size_t bias = 0;
};

struct Relu {};

/// Per-sample group normalization with a learned per-channel affine.
struct GroupNorm {
  std::size_t channels = 0;
  std::size_t groups = 4;
  std::size_t gamma = 0;
  std::size_t beta = 0;
  double eps = 1e-5;
};

struct Upsample {
  std::size_t factor = 2;
};

/// Rearranges kxk spatial patches into channels: C x H x W -> C*k*k x H/k x W/k.
struct SpaceToDepth {
  std::size_t factor = 8;
};

struct SoftmaxChannels {};

using Layer = std::variant<Conv3x3, Dense, TokenMix, Relu, GroupNorm, Upsample, SpaceToDepth, SoftmaxChannels>;

std::string layer_name(const Layer& layer);

/// Output extents for a rank-4 input; throws ShapeError naming the layer.
Shape layer_output_shape(const Layer& layer, const Shape& input);

/// Pure forward pass over an NxCxHxW input.
Tensor layer_forward(const Layer& layer, const Tensor& input, const ParamSet& params);

/// Forward pass that also fills `cache` for layer_backward.
Tensor layer_forward(const Layer& layer, const Tensor& input, const ParamSet& params, LayerCache& cache);

/// Returns dL/dinput and adds parameter gradients into `grads`.
Tensor layer_backward(const Layer& layer, const Tensor& grad_output, const LayerCache& cache,
                      const ParamSet& params, GradBuffer& grads);

/// Numerically stable softmax over the channel axis of an NxCxHxW tensor.
Tensor softmax_channels(const Tensor& logits);

}  // namespace divcot
