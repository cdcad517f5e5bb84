#pragma once

#include <array>
#include <utility>
#include <vector>

#include "divcot/tensor.hpp"

namespace divcot {

/// Full-range BT.601 on a 3xHxW image with values in [0,255]; no clamping.
Tensor rgb_to_ycbcr(const Tensor& rgb);

/// Orthonormal type-II DCT over each non-overlapping 8x8 block of an HxW plane.
Tensor block_dct8(const Tensor& plane);
/// Inverse (type-III) of block_dct8.
Tensor block_idct8(const Tensor& coeffs);

/// Y, Cb, Cr coefficient planes -> 192 x H/8 x W/8 cube, channel = comp*64 + u*8 + v
/// where (u, v) are the (row, column) frequencies inside a block.
Tensor regroup_to_cube(const Tensor& y, const Tensor& cb, const Tensor& cr);

/// JPEG zigzag order of (row, column) frequencies.
const std::array<std::pair<int, int>, 64>& zigzag_order();

inline constexpr std::array<int, 3> kDefaultQuota = {44, 10, 10};

/// Cube channel indices kept by the selection: the first quota[c] zigzag
/// frequencies of each component, Y then Cb then Cr.
std::vector<int> zigzag_selection(const std::array<int, 3>& quota = kDefaultQuota);

/// Keeps the cube channels listed in `channels`, in that order.
Tensor select_channels(const Tensor& cube, const std::vector<int>& channels = zigzag_selection());

/// 3xHxW RGB in [0,255] -> 64 x H/8 x W/8 selected DCT coefficients.
Tensor dct_transform(const Tensor& rgb);

/// Hexcone HSV on a 3xHxW image in [0,1]; hue scaled to [0,1), gray pixels get hue 0.
Tensor rgb_to_hsv(const Tensor& rgb);
Tensor hsv_to_rgb(const Tensor& hsv);

}  // namespace divcot
