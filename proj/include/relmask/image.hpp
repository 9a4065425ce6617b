#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace relmask {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// H x W x 3 bytes, row-major, row 0 first.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int h, int w, Rgb fill = {});

  std::uint8_t* px(int v, int u) { return &data[3 * (static_cast<std::size_t>(v) * width + u)]; }
  const std::uint8_t* px(int v, int u) const {
    return &data[3 * (static_cast<std::size_t>(v) * width + u)];
  }
  Rgb rgb(int v, int u) const {
    const auto* p = px(v, u);
    return {p[0], p[1], p[2]};
  }
  void set(int v, int u, Rgb c) {
    auto* p = px(v, u);
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }
  bool contains(int v, int u) const { return v >= 0 && v < height && u >= 0 && u < width; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// H x W binary buffer, one byte per pixel (0 or 1).
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& operator()(int v, int u) { return bits[static_cast<std::size_t>(v) * width + u]; }
  std::uint8_t operator()(int v, int u) const {
    return bits[static_cast<std::size_t>(v) * width + u];
  }
  long count() const;

  friend bool operator==(const Mask&, const Mask&) = default;
};

// Binary PPM (P6, maxval 255) and packed PBM (P4, 1 = set).
void write_ppm(std::ostream& os, const Image& img);
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(std::istream& is);
Image read_ppm(const std::filesystem::path& path);

void write_pbm(std::ostream& os, const Mask& mask);
void write_pbm(const std::filesystem::path& path, const Mask& mask);
Mask read_pbm(std::istream& is);
Mask read_pbm(const std::filesystem::path& path);

}  // namespace relmask
