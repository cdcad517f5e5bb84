#include "divcot/freq.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>

namespace divcot {

namespace {

using Mat8 = Eigen::Matrix<double, 8, 8, Eigen::RowMajor>;

const Mat8& dct_basis() {
  static const Mat8 basis = [] {
    Mat8 c;
    for (int k = 0; k < 8; ++k)
      for (int n = 0; n < 8; ++n) {
        const double alpha = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
        c(k, n) = alpha * std::cos((2 * n + 1) * k * std::numbers::pi / 16.0);
      }
    return c;
  }();
  return basis;
}

void check_image(const Tensor& img, const char* what) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw ShapeError(std::string(what) + ": expected 3xHxW image, got " + shape_str(img.shape()));
}

void check_plane(const Tensor& plane, const char* what) {
  if (plane.rank() != 2) throw ShapeError(std::string(what) + ": expected HxW plane, got " + shape_str(plane.shape()));
  if (plane.dim(0) % 8 != 0 || plane.dim(1) % 8 != 0 || plane.empty())
    throw ShapeError(std::string(what) + ": plane extents must be multiples of 8, got " + shape_str(plane.shape()));
}

template <bool Inverse>
Tensor blockwise(const Tensor& plane, const char* what) {
  check_plane(plane, what);
  const std::size_t h = plane.dim(0), w = plane.dim(1);
  Tensor out(plane.shape());
  const Mat8& c = dct_basis();
  Mat8 block;
  for (std::size_t by = 0; by < h; by += 8)
    for (std::size_t bx = 0; bx < w; bx += 8) {
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) block(i, j) = plane.at(by + i, bx + j);
      Mat8 res;
      if constexpr (Inverse)
        res.noalias() = c.transpose() * block * c;
      else
        res.noalias() = c * block * c.transpose();
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) out.at(by + i, bx + j) = res(i, j);
    }
  return out;
}

Tensor channel_plane(const Tensor& img, std::size_t c) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  Tensor plane({h, w});
  std::copy_n(img.data() + c * h * w, h * w, plane.data());
  return plane;
}

}  // namespace

Tensor rgb_to_ycbcr(const Tensor& rgb) {
  check_image(rgb, "rgb_to_ycbcr");
  const std::size_t p = rgb.dim(1) * rgb.dim(2);
  Tensor out(rgb.shape());
  for (std::size_t i = 0; i < p; ++i) {
    const double r = rgb[i], g = rgb[p + i], b = rgb[2 * p + i];
    out[i] = 0.299 * r + 0.587 * g + 0.114 * b;
    out[p + i] = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    out[2 * p + i] = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
  }
  return out;
}

Tensor block_dct8(const Tensor& plane) { return blockwise<false>(plane, "block_dct8"); }
Tensor block_idct8(const Tensor& coeffs) { return blockwise<true>(coeffs, "block_idct8"); }

Tensor regroup_to_cube(const Tensor& y, const Tensor& cb, const Tensor& cr) {
  check_plane(y, "regroup_to_cube");
  if (cb.shape() != y.shape() || cr.shape() != y.shape())
    throw ShapeError("regroup_to_cube: plane sizes differ: " + shape_str(y.shape()) + ", " + shape_str(cb.shape()) +
                     ", " + shape_str(cr.shape()));
  const std::size_t gh = y.dim(0) / 8, gw = y.dim(1) / 8;
  Tensor cube({192, gh, gw});
  const Tensor* planes[3] = {&y, &cb, &cr};
  for (std::size_t comp = 0; comp < 3; ++comp)
    for (std::size_t u = 0; u < 8; ++u)
      for (std::size_t v = 0; v < 8; ++v)
        for (std::size_t by = 0; by < gh; ++by)
          for (std::size_t bx = 0; bx < gw; ++bx)
            cube.at(comp * 64 + u * 8 + v, by, bx) = planes[comp]->at(by * 8 + u, bx * 8 + v);
  return cube;
}

const std::array<std::pair<int, int>, 64>& zigzag_order() {
  static const auto order = [] {
    std::array<std::pair<int, int>, 64> z{};
    std::size_t k = 0;
    for (int s = 0; s < 15; ++s) {
      // Even anti-diagonals run bottom-left to top-right, odd ones the other way.
      for (int i = 0; i <= s; ++i) {
        const int row = s % 2 == 0 ? s - i : i;
        const int col = s - row;
        if (row < 8 && col < 8) z[k++] = {row, col};
      }
    }
    return z;
  }();
  return order;
}

std::vector<int> zigzag_selection(const std::array<int, 3>& quota) {
  std::vector<int> channels;
  for (int comp = 0; comp < 3; ++comp) {
    if (quota[comp] < 0 || quota[comp] > 64) throw std::invalid_argument("zigzag_selection: quota must be in [0, 64]");
    for (int k = 0; k < quota[comp]; ++k) {
      const auto [u, v] = zigzag_order()[k];
      channels.push_back(comp * 64 + u * 8 + v);
    }
  }
  return channels;
}

Tensor select_channels(const Tensor& cube, const std::vector<int>& channels) {
  if (cube.rank() != 3 || cube.dim(0) != 192)
    throw ShapeError("select_channels: expected 192xHxW cube, got " + shape_str(cube.shape()));
  const std::size_t p = cube.dim(1) * cube.dim(2);
  Tensor out({channels.size(), cube.dim(1), cube.dim(2)});
  for (std::size_t k = 0; k < channels.size(); ++k) {
    if (channels[k] < 0 || channels[k] >= 192) throw std::invalid_argument("select_channels: channel out of range");
    std::copy_n(cube.data() + static_cast<std::size_t>(channels[k]) * p, p, out.data() + k * p);
  }
  return out;
}

Tensor dct_transform(const Tensor& rgb) {
  check_image(rgb, "dct_transform");
  const Tensor ycc = rgb_to_ycbcr(rgb);
  return select_channels(regroup_to_cube(block_dct8(channel_plane(ycc, 0)), block_dct8(channel_plane(ycc, 1)),
                                         block_dct8(channel_plane(ycc, 2))));
}

Tensor rgb_to_hsv(const Tensor& rgb) {
  check_image(rgb, "rgb_to_hsv");
  const std::size_t p = rgb.dim(1) * rgb.dim(2);
  Tensor out(rgb.shape());
  for (std::size_t i = 0; i < p; ++i) {
    const double r = rgb[i], g = rgb[p + i], b = rgb[2 * p + i];
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
    double h = 0.0;
    if (d > 0.0) {
      if (mx == r)
        h = (g - b) / d;
      else if (mx == g)
        h = 2.0 + (b - r) / d;
      else
        h = 4.0 + (r - g) / d;
      h /= 6.0;
      if (h < 0.0) h += 1.0;
    }
    out[i] = h;
    out[p + i] = mx > 0.0 ? d / mx : 0.0;
    out[2 * p + i] = mx;
  }
  return out;
}

Tensor hsv_to_rgb(const Tensor& hsv) {
  check_image(hsv, "hsv_to_rgb");
  const std::size_t p = hsv.dim(1) * hsv.dim(2);
  Tensor out(hsv.shape());
  for (std::size_t i = 0; i < p; ++i) {
    const double h = hsv[i] * 6.0, s = hsv[p + i], v = hsv[2 * p + i];
    const double c = v * s;
    const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(std::floor(h)) % 6) {
      case 0: r = c, g = x; break;
      case 1: r = x, g = c; break;
      case 2: g = c, b = x; break;
      case 3: g = x, b = c; break;
      case 4: r = x, b = c; break;
      default: r = c, b = x; break;
    }
    const double m = v - c;
    out[i] = r + m;
    out[p + i] = g + m;
    out[2 * p + i] = b + m;
  }
  return out;
}

}  // namespace divcot
