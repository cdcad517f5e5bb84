#include "divcot/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <vector>

namespace divcot {

namespace {

struct Netpbm {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> pixels;
  int maxval = 255;
};

class HeaderParser {
 public:
  HeaderParser(const std::string& path, const std::vector<unsigned char>& bytes) : path_(path), bytes_(bytes) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::runtime_error(path_ + ": " + msg + " at byte " + std::to_string(pos_));
  }

  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  int number(const char* what) {
    skip_space();
    const std::size_t start = pos_;
    long long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > (1 << 24)) fail(std::string(what) + " too large");
      ++pos_;
    }
    if (pos_ == start) fail(std::string("expected ") + what);
    return static_cast<int>(v);
  }

  void magic(const char* expected) {
    if (bytes_.size() < 2 || bytes_[0] != expected[0] || bytes_[1] != expected[1])
      fail(std::string("expected magic ") + expected);
    pos_ = 2;
  }

  void single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("expected whitespace after header");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::string& path_;
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

Netpbm read_netpbm(const std::string& path, const char* magic, int channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  HeaderParser p(path, bytes);
  p.magic(magic);
  Netpbm img;
  img.width = p.number("width");
  img.height = p.number("height");
  img.maxval = p.number("maxval");
  if (img.width <= 0 || img.height <= 0) p.fail("image extents must be positive");
  if (img.maxval <= 0 || img.maxval > 255) p.fail("maxval must be in [1, 255]");
  p.single_space();
  const std::size_t need = static_cast<std::size_t>(img.width) * img.height * channels;
  if (bytes.size() - p.pos() < need)
    p.fail("truncated pixel data: need " + std::to_string(need) + " bytes, have " + std::to_string(bytes.size() - p.pos()));
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(p.pos()),
                    bytes.begin() + static_cast<std::ptrdiff_t>(p.pos() + need));
  return img;
}

std::string encode_netpbm(const char* magic, int width, int height, const std::vector<unsigned char>& pixels) {
  std::string out = std::string(magic) + "\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(pixels.begin(), pixels.end());
  return out;
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(path + ": write failed");
}

void write_netpbm(const std::string& path, const char* magic, int width, int height,
                  const std::vector<unsigned char>& pixels) {
  write_bytes(path, encode_netpbm(magic, width, height, pixels));
}

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

Tensor read_ppm(const std::string& path) {
  const Netpbm img = read_netpbm(path, "P6", 3);
  const std::size_t h = img.height, w = img.width, p = h * w;
  Tensor out({3, h, w});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t c = 0; c < 3; ++c) out[c * p + i] = img.pixels[i * 3 + c] / static_cast<double>(img.maxval);
  return out;
}

std::string encode_ppm(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("write_ppm: expected 3xHxW image, got " + shape_str(rgb.shape()));
  const std::size_t p = rgb.dim(1) * rgb.dim(2);
  std::vector<unsigned char> px(p * 3);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t c = 0; c < 3; ++c) px[i * 3 + c] = to_byte(rgb[c * p + i]);
  return encode_netpbm("P6", static_cast<int>(rgb.dim(2)), static_cast<int>(rgb.dim(1)), px);
}

void write_ppm(const std::string& path, const Tensor& rgb) { write_bytes(path, encode_ppm(rgb)); }

Grid<std::uint8_t> read_pgm(const std::string& path) {
  const Netpbm img = read_netpbm(path, "P5", 1);
  Grid<std::uint8_t> g(img.height, img.width);
  std::copy(img.pixels.begin(), img.pixels.end(), g.data.begin());
  return g;
}

std::string encode_pgm(const Grid<std::uint8_t>& gray) {
  return encode_netpbm("P5", gray.width, gray.height, std::vector<unsigned char>(gray.data.begin(), gray.data.end()));
}

void write_pgm(const std::string& path, const Grid<std::uint8_t>& gray) { write_bytes(path, encode_pgm(gray)); }

void write_plane_pgm(const std::string& path, const Tensor& plane) {
  if (plane.rank() != 2) throw ShapeError("write_plane_pgm: expected HxW plane, got " + shape_str(plane.shape()));
  const auto [lo, hi] = std::minmax_element(plane.values().begin(), plane.values().end());
  const double range = *hi - *lo;
  std::vector<unsigned char> px(plane.size());
  for (std::size_t i = 0; i < plane.size(); ++i) px[i] = range > 0 ? to_byte((plane[i] - *lo) / range) : 0;
  write_netpbm(path, "P5", static_cast<int>(plane.dim(1)), static_cast<int>(plane.dim(0)), px);
}

}  // namespace divcot
