#include "divcot/tensor.hpp"

#include <cmath>
#include <sstream>

namespace divcot {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  if (shape_.empty() || shape_.size() > 4) throw ShapeError("tensor rank must be 1..4, got " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty() || shape_.size() > 4) throw ShapeError("tensor rank must be 1..4, got " + shape_str(shape_));
  if (data_.size() != shape_numel(shape_))
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::sample(std::size_t n) const {
  if (rank() != 4) throw ShapeError("sample() needs a rank-4 tensor, got " + shape_str(shape_));
  const std::size_t per = data_.size() / shape_[0];
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(n * per),
                          data_.begin() + static_cast<std::ptrdiff_t>((n + 1) * per));
  return Tensor({1, shape_[1], shape_[2], shape_[3]}, std::move(out));
}

void Tensor::set_sample(std::size_t n, const Tensor& s) {
  const std::size_t per = data_.size() / shape_[0];
  if (s.size() != per) throw ShapeError("set_sample: got " + shape_str(s.shape()) + " for batch " + shape_str(shape_));
  std::copy(s.data(), s.data() + per, data_.begin() + static_cast<std::ptrdiff_t>(n * per));
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) throw ShapeError("add: " + shape_str(shape_) + " vs " + shape_str(other.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor stack(std::span<const Tensor> images) {
  if (images.empty()) throw ShapeError("stack: empty batch");
  const Shape& s = images[0].shape();
  if (s.size() != 3) throw ShapeError("stack: expected CxHxW images, got " + shape_str(s));
  Tensor out({images.size(), s[0], s[1], s[2]});
  const std::size_t per = images[0].size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != s) throw ShapeError("stack: mixed shapes " + shape_str(s) + " and " + shape_str(images[i].shape()));
    std::copy(images[i].data(), images[i].data() + per, out.data() + i * per);
  }
  return out;
}

void check_finite(const Tensor& t, const std::string& what) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i])) throw NonFiniteError(what + ": non-finite value at flat index " + std::to_string(i));
}

void expect_shape(const Tensor& t, const Shape& expected, const std::string& what) {
  if (t.shape() != expected)
    throw ShapeError(what + ": expected shape " + shape_str(expected) + ", got " + shape_str(t.shape()));
}

}  // namespace divcot
