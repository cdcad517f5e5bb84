#pragma once

#include <string>

#include "divcot/tensor.hpp"

namespace divcot {

/// Binary PPM (P6, maxval <= 255) -> 3xHxW tensor with values in [0,1].
Tensor read_ppm(const std::string& path);
/// Writes a 3xHxW tensor in [0,1] (clamped, rounded) as binary PPM.
void write_ppm(const std::string& path, const Tensor& rgb);

/// Binary PGM (P5, maxval <= 255) as raw byte values.
Grid<std::uint8_t> read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Grid<std::uint8_t>& gray);

/// In-memory file images, byte-identical to what the writers produce.
std::string encode_ppm(const Tensor& rgb);
std::string encode_pgm(const Grid<std::uint8_t>& gray);

/// Writes an HxW plane as PGM after min-max scaling to [0,255] (constant planes map to 0).
void write_plane_pgm(const std::string& path, const Tensor& plane);

}  // namespace divcot
