#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "folk/error.hpp"
#include "folk/imaging.hpp"

namespace folk::imaging {
namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  unsigned long read_uint(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    unsigned long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000'000ul) throw DecodeError(std::string("netpbm: header field ") + field + " too large");
      ++pos_;
    }
    if (pos_ == start) {
      throw DecodeError(std::string("netpbm: malformed header, expected ") + field + " at byte " + std::to_string(start));
    }
    return value;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }
  std::size_t size() const { return bytes_.size(); }
  std::uint8_t peek() const { return bytes_[pos_]; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Image decode_netpbm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw DecodeError("netpbm: malformed header, expected magic P5 or P6");
  }
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader reader(bytes);
  reader.advance(2);
  const auto width = reader.read_uint("width");
  const auto height = reader.read_uint("height");
  const auto maxval = reader.read_uint("maxval");
  if (width == 0 || height == 0) throw DecodeError("netpbm: malformed header, zero dimension");
  if (maxval == 0 || maxval > 255) throw DecodeError("netpbm: unsupported maxval " + std::to_string(maxval));
  if (reader.pos() >= reader.size() || !std::isspace(reader.peek())) {
    throw DecodeError("netpbm: malformed header, missing whitespace after maxval");
  }
  reader.advance(1);

  Image image(channels, height, width);
  const std::size_t needed = channels * height * width;
  const std::size_t offset = reader.pos();
  if (bytes.size() - offset < needed) {
    throw DecodeError("netpbm: truncated payload at byte offset " + std::to_string(bytes.size()) + " (expected " +
                      std::to_string(offset + needed) + " bytes)");
  }
  const double scale = 1.0 / static_cast<double>(maxval);
  const std::size_t plane = height * width;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const auto raw = bytes[offset + i * channels + c];
      if (raw > maxval) {
        throw DecodeError("netpbm: sample exceeds maxval at byte offset " + std::to_string(offset + i * channels + c));
      }
      image.data[c * plane + i] = static_cast<double>(raw) * scale;
    }
  }
  return image;
}

std::vector<std::uint8_t> encode_netpbm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw InvalidArgument("netpbm: can only encode 1 or 3 channels, got " + std::to_string(image.channels));
  }
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(image.width) +
                             " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const std::size_t plane = image.plane_size();
  out.reserve(out.size() + plane * image.channels);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < image.channels; ++c) {
      const double v = std::clamp(image.data[c * plane + i], 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
  }
  return out;
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open image '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_netpbm(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

void write_image(const Image& image, const std::filesystem::path& path) {
  const auto bytes = encode_netpbm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write image '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_grid_pgm(const spectral::RealGrid& grid, const std::filesystem::path& path, double lo, double hi) {
  Image img(1, grid.height, grid.width);
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < grid.size(); ++i) img.data[i] = (grid.data[i] - lo) / span;
  write_image(img, path);
}

}  // namespace folk::imaging
