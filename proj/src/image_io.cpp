#include "hpl/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace hpl {

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::size_t pgm_token(std::string_view bytes, std::size_t& pos) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  std::size_t value = 0;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
    if (value > (1u << 24)) throw FormatError("PGM header value too large", start);
    ++pos;
  }
  if (pos == start) throw FormatError("malformed PGM header", start);
  return value;
}

}  // namespace

std::string encode_pgm(std::size_t height, std::size_t width, std::span<const std::uint8_t> pixels) {
  if (pixels.size() != height * width) throw ShapeError("encode_pgm: pixel count mismatch");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  return out;
}

LabelMap decode_pgm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes.substr(0, 2) != "P5") throw FormatError("not a binary PGM (P5)", 0);
  std::size_t pos = 2;
  const std::size_t width = pgm_token(bytes, pos);
  const std::size_t height = pgm_token(bytes, pos);
  const std::size_t maxval = pgm_token(bytes, pos);
  if (maxval != 255) throw FormatError("PGM maxval must be 255", pos);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("malformed PGM header", pos);
  }
  ++pos;
  if (bytes.size() - pos < width * height) throw FormatError("truncated PGM pixel data", bytes.size());
  LabelMap out(height, width);
  std::copy_n(reinterpret_cast<const std::uint8_t*>(bytes.data() + pos), width * height, out.data.begin());
  return out;
}

void write_label_pgm(const LabelMap& labels, const std::filesystem::path& path) {
  bin::write_file_atomic(path, encode_pgm(labels.height, labels.width, labels.data));
}

LabelMap read_label_pgm(const std::filesystem::path& path) { return decode_pgm(bin::read_file(path)); }

void write_image_pgm(const Tensor& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || image.dim(0) != 1) throw ShapeError("write_image_pgm: expected 1 x H x W");
  std::vector<std::uint8_t> px(image.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  }
  bin::write_file_atomic(path, encode_pgm(image.dim(1), image.dim(2), px));
}

Tensor read_image_pgm(const std::filesystem::path& path) {
  const LabelMap raw = read_label_pgm(path);
  Tensor out = Tensor::chw(1, raw.height, raw.width);
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw.data[i] / 255.0;
  return out;
}

void append_tensor(std::string& out, const Tensor& t) {
  bin::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) bin::put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) bin::put_f64(out, v);
}

Tensor read_tensor(bin::Reader& rd) {
  const std::uint32_t rank = rd.u32("tensor rank");
  if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), rd.offset() - 4);
  Shape shape(rank);
  for (auto& d : shape) d = rd.u32("tensor dim");
  const std::size_t n = shape_numel(shape);
  rd.require(n * 8, "tensor data");
  std::vector<double> data(n);
  for (auto& v : data) v = rd.f64("tensor data");
  return Tensor(std::move(shape), std::move(data));
}

void write_tensor_file(const Tensor& t, const std::filesystem::path& path) {
  std::string out;
  append_tensor(out, t);
  bin::write_file_atomic(path, out);
}

Tensor read_tensor_file(const std::filesystem::path& path) {
  const std::string bytes = bin::read_file(path);
  bin::Reader rd(bytes);
  Tensor t = read_tensor(rd);
  if (!rd.at_end()) throw FormatError("trailing bytes after tensor", rd.offset());
  return t;
}

}  // namespace hpl
