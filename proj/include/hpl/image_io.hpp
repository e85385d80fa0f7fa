#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "hpl/binary_io.hpp"
#include "hpl/tensor.hpp"

namespace hpl {

// Binary PGM (P5, maxval 255). Label maps store the class index per pixel.
std::string encode_pgm(std::size_t height, std::size_t width, std::span<const std::uint8_t> pixels);
LabelMap decode_pgm(std::string_view bytes);

void write_label_pgm(const LabelMap& labels, const std::filesystem::path& path);
LabelMap read_label_pgm(const std::filesystem::path& path);

// Grayscale image (1 x H x W in [0,1]) quantized to 8 bits.
void write_image_pgm(const Tensor& image, const std::filesystem::path& path);
Tensor read_image_pgm(const std::filesystem::path& path);

// Raw tensor encoding: u32 rank, u32 dims..., then little-endian float64 values.
void append_tensor(std::string& out, const Tensor& t);
Tensor read_tensor(bin::Reader& rd);

void write_tensor_file(const Tensor& t, const std::filesystem::path& path);
Tensor read_tensor_file(const std::filesystem::path& path);

}  // namespace hpl
