#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace divcot {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when a tensor or map arrives with the wrong extents.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when NaN/Inf shows up where finite values are required.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major float64 array of rank 1..4. Rank-4 tensors use N,C,H,W
/// semantics; single images are rank 3 (C,H,W); planes are rank 2 (H,W).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  double at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  double& at(std::size_t h, std::size_t w) { return data_[h * shape_[1] + w]; }
  double at(std::size_t h, std::size_t w) const { return data_[h * shape_[1] + w]; }

  /// Same data, new extents; the element count must not change.
  Tensor reshaped(Shape shape) const;
  void fill(double v);

  /// Sample `n` of a rank-4 tensor as a 1xCxHxW tensor.
  Tensor sample(std::size_t n) const;
  /// Writes a 1xCxHxW tensor into slot `n` of this rank-4 tensor.
  void set_sample(std::size_t n, const Tensor& sample);

  Tensor& operator+=(const Tensor& other);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Stacks rank-3 CxHxW tensors into an NxCxHxW batch.
Tensor stack(std::span<const Tensor> images);

/// Throws NonFiniteError naming `what` if any element is NaN/Inf.
void check_finite(const Tensor& t, const std::string& what);

void expect_shape(const Tensor& t, const Shape& expected, const std::string& what);

/// HxW grid of small integers: class maps (255 = ignore) and boolean masks.
template <class T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  T& operator()(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  T operator()(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Grid& o) const { return height == o.height && width == o.width; }
  bool operator==(const Grid& o) const = default;
};

using LabelMap = Grid<std::uint8_t>;
using Mask = Grid<std::uint8_t>;

inline constexpr std::uint8_t kIgnoreLabel = 255;

}  // namespace divcot
