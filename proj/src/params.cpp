#include "divcot/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace divcot {

std::size_t ParamSet::add(std::string name, Tensor value) {
  if (lookup_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  const std::size_t idx = names_.size();
  lookup_.emplace(name, idx);
  names_.push_back(std::move(name));
  grads_.emplace_back(value.shape(), 0.0);
  velocity_.emplace_back(value.shape(), 0.0);
  values_.push_back(std::move(value));
  return idx;
}

std::size_t ParamSet::index(std::string_view name) const {
  auto it = lookup_.find(std::string(name));
  if (it == lookup_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return it->second;
}

bool ParamSet::contains(std::string_view name) const { return lookup_.contains(std::string(name)); }

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& g : grads_) g.fill(0.0);
}

GradBuffer ParamSet::make_grad_buffer() const {
  GradBuffer b;
  b.reserve(values_.size());
  for (const auto& v : values_) b.emplace_back(v.shape(), 0.0);
  return b;
}

void ParamSet::accumulate(const GradBuffer& buffer) {
  if (buffer.size() != grads_.size()) throw ShapeError("gradient buffer does not match parameter set");
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += buffer[i];
}

double& ParamSet::flat_value(std::size_t k) {
  for (auto& v : values_) {
    if (k < v.size()) return v[k];
    k -= v.size();
  }
  throw std::out_of_range("flat parameter index out of range");
}

double ParamSet::flat_grad(std::size_t k) const {
  for (const auto& g : grads_) {
    if (k < g.size()) return g[k];
    k -= g.size();
  }
  throw std::out_of_range("flat parameter index out of range");
}

bool ParamSet::same_values(const ParamSet& other) const {
  return names_ == other.names_ && values_ == other.values_;
}

namespace {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

constexpr char kParamMagic[8] = {'D', 'C', 'P', 'A', 'R', 'A', 'M', '1'};
constexpr char kTensorMagic[8] = {'D', 'C', 'T', 'E', 'N', 'S', 'R', '1'};

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

void put_doubles(std::ostream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

std::uint64_t get_u64(std::istream& in, const char* what) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 8)) throw std::runtime_error(std::string("truncated file reading ") + what);
  return v;
}

void put_shape(std::ostream& out, const Tensor& t) {
  put_u64(out, t.rank());
  for (std::size_t d : t.shape()) put_u64(out, d);
}

Tensor get_tensor_body(std::istream& in) {
  const std::uint64_t rank = get_u64(in, "rank");
  if (rank == 0 || rank > 4) throw std::runtime_error("bad tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get_u64(in, "extent");
  return Tensor(shape);
}

void get_doubles(std::istream& in, Tensor& t) {
  if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
    throw std::runtime_error("truncated tensor payload");
}

}  // namespace

void write_params(std::ostream& out, const ParamSet& params, const std::string& meta) {
  out.write(kParamMagic, 8);
  put_u64(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put_u64(out, params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.name(i);
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Tensor& v = params.value(i);
    put_shape(out, v);
    put_u64(out, v.size());
    put_doubles(out, v);
  }
}

void save_params(const std::string& path, const ParamSet& params, const std::string& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_params(out, params, meta);
  if (!out) throw std::runtime_error("write failed: " + path);
}

LoadedParams read_params(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kParamMagic, 8) != 0) throw std::runtime_error("not a parameter file");
  LoadedParams result;
  const std::uint64_t meta_len = get_u64(in, "meta length");
  result.meta.resize(meta_len);
  if (!in.read(result.meta.data(), static_cast<std::streamsize>(meta_len))) throw std::runtime_error("truncated meta");
  const std::uint64_t count = get_u64(in, "entry count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = get_u64(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name_len))) throw std::runtime_error("truncated name");
    Tensor t = get_tensor_body(in);
    const std::uint64_t n = get_u64(in, "value count");
    if (n != t.size()) throw std::runtime_error("value count mismatch for " + name);
    get_doubles(in, t);
    result.params.add(std::move(name), std::move(t));
  }
  return result;
}

LoadedParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open parameter file: " + path);
  try {
    return read_params(in);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(kTensorMagic, 8);
  put_shape(out, t);
  put_doubles(out, t);
  if (!out) throw std::runtime_error("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open tensor file: " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kTensorMagic, 8) != 0)
    throw std::runtime_error(path + ": not a tensor file");
  Tensor t = get_tensor_body(in);
  get_doubles(in, t);
  return t;
}

}  // namespace divcot
