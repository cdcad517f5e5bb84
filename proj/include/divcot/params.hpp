#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "divcot/tensor.hpp"

namespace divcot {

/// Gradient storage aligned with a ParamSet's entries (same order, same shapes).
using GradBuffer = std::vector<Tensor>;

/// Named trainable tensors with paired gradients and momentum buffers.
class ParamSet {
 public:
  /// Registers a parameter; returns its index. Names must be unique.
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const { return names_.size(); }
  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }

  Tensor& value(std::size_t i) { return values_.at(i); }
  const Tensor& value(std::size_t i) const { return values_.at(i); }
  Tensor& grad(std::size_t i) { return grads_.at(i); }
  const Tensor& grad(std::size_t i) const { return grads_.at(i); }
  Tensor& velocity(std::size_t i) { return velocity_.at(i); }
  const Tensor& velocity(std::size_t i) const { return velocity_.at(i); }

  /// Total number of scalar parameters.
  std::size_t scalar_count() const;

  std::uint64_t step() const { return step_; }
  void advance_step() { ++step_; }

  void zero_grad();
  GradBuffer make_grad_buffer() const;
  /// grads += buffer, entry by entry in index order.
  void accumulate(const GradBuffer& buffer);

  /// Flat views over every scalar, in entry order (used by gradient checks).
  double& flat_value(std::size_t k);
  double flat_grad(std::size_t k) const;

  bool same_values(const ParamSet& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  std::vector<Tensor> velocity_;
  std::unordered_map<std::string, std::size_t> lookup_;
  std::uint64_t step_ = 0;
};

/// Binary layout (all integers u64 little-endian, floats IEEE-754 f64 LE):
///   "DCPARAM1" | meta_len | meta bytes | count |
///   count x { name_len | name | rank | rank x extent | value_count | values }
/// `meta` is an opaque UTF-8 string (the network descriptor JSON).
void write_params(std::ostream& out, const ParamSet& params, const std::string& meta);
void save_params(const std::string& path, const ParamSet& params, const std::string& meta);

struct LoadedParams {
  ParamSet params;
  std::string meta;
};
LoadedParams read_params(std::istream& in);
LoadedParams load_params(const std::string& path);

/// Raw tensor file: "DCTENSR1" | rank | extents | values (same integer/float encoding).
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace divcot
