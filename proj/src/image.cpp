#include "relmask/image.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "relmask/errors.hpp"

namespace relmask {

Image::Image(int h, int w, Rgb fill) : height(h), width(w) {
  if (h <= 0 || w <= 0) throw std::invalid_argument("Image: non-positive size");
  data.resize(3 * static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < data.size(); i += 3) {
    data[i] = fill.r;
    data[i + 1] = fill.g;
    data[i + 2] = fill.b;
  }
}

long Mask::count() const { return std::count(bits.begin(), bits.end(), std::uint8_t{1}); }

namespace {

// Reads one whitespace-delimited header integer, skipping '#' comments.
int header_int(std::istream& is) {
  int c = is.peek();
  while (c != EOF) {
    if (std::isspace(c)) {
      is.get();
    } else if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else {
      break;
    }
    c = is.peek();
  }
  int v = -1;
  if (!(is >> v) || v < 0) throw FormatError("netpbm: bad header field");
  return v;
}

void expect_magic(std::istream& is, const char* magic) {
  char m[2] = {};
  if (!is.read(m, 2) || m[0] != magic[0] || m[1] != magic[1])
    throw FormatError(std::string("netpbm: expected ") + magic);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return is;
}

}  // namespace

void write_ppm(std::ostream& os, const Image& img) {
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data.data()),
           static_cast<std::streamsize>(img.data.size()));
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  auto os = open_out(path);
  write_ppm(os, img);
}

Image read_ppm(std::istream& is) {
  expect_magic(is, "P6");
  const int w = header_int(is);
  const int h = header_int(is);
  if (header_int(is) != 255) throw FormatError("ppm: only maxval 255 is supported");
  is.get();
  Image img(h, w);
  if (!is.read(reinterpret_cast<char*>(img.data.data()),
               static_cast<std::streamsize>(img.data.size())))
    throw FormatError("ppm: truncated pixel data");
  return img;
}

Image read_ppm(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_ppm(is);
}

void write_pbm(std::ostream& os, const Mask& mask) {
  os << "P4\n" << mask.width << ' ' << mask.height << '\n';
  const int row_bytes = (mask.width + 7) / 8;
  std::string row(static_cast<std::size_t>(row_bytes), '\0');
  for (int v = 0; v < mask.height; ++v) {
    std::fill(row.begin(), row.end(), '\0');
    for (int u = 0; u < mask.width; ++u)
      if (mask(v, u)) row[u / 8] = static_cast<char>(row[u / 8] | (0x80 >> (u % 8)));
    os.write(row.data(), row_bytes);
  }
}

void write_pbm(const std::filesystem::path& path, const Mask& mask) {
  auto os = open_out(path);
  write_pbm(os, mask);
}

Mask read_pbm(std::istream& is) {
  expect_magic(is, "P4");
  const int w = header_int(is);
  const int h = header_int(is);
  is.get();
  if (w <= 0 || h <= 0) throw FormatError("pbm: empty image");
  Mask mask(h, w);
  const int row_bytes = (w + 7) / 8;
  std::string row(static_cast<std::size_t>(row_bytes), '\0');
  for (int v = 0; v < h; ++v) {
    if (!is.read(row.data(), row_bytes)) throw FormatError("pbm: truncated bitmap");
    for (int u = 0; u < w; ++u)
      mask(v, u) = (static_cast<unsigned char>(row[u / 8]) >> (7 - u % 8)) & 1;
  }
  return mask;
}

Mask read_pbm(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_pbm(is);
}

}  // namespace relmask
