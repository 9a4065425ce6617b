#include "relmask/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace relmask {

namespace {

constexpr Rgb kStops[3] = {{68, 1, 84}, {33, 145, 140}, {253, 231, 37}};

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Largest t whose rounded color is strictly dimmer than the top stop.
constexpr double kBelowTop = 1.0 - 1.0 / 440;

}  // namespace

Rgb ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const int seg = t < 0.5 ? 0 : 1;
  const double f = (t - 0.5 * seg) * 2.0;
  const Rgb& a = kStops[seg];
  const Rgb& b = kStops[seg + 1];
  return {to_byte(a.r + f * (b.r - a.r)), to_byte(a.g + f * (b.g - a.g)),
          to_byte(a.b + f * (b.b - a.b))};
}

Image render_heatmap(std::span<const float> map, int height, int width) {
  if (static_cast<long>(map.size()) != static_cast<long>(height) * width)
    throw std::invalid_argument("render_heatmap: map size does not match height x width");
  const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
  const double range = map.empty() ? 0.0 : double(*hi) - double(*lo);
  Image img(height, width);
  for (int v = 0; v < height; ++v)
    for (int u = 0; u < width; ++u) {
      const float x = map[static_cast<std::size_t>(v) * width + u];
      const double t = range > 0 ? (double(x) - *lo) / range : 0.0;
      img.set(v, u, ramp(x == *hi && range > 0 ? 1.0 : std::min(t, kBelowTop)));
    }
  return img;
}

void draw_marker(Image& img, Pixel p, Rgb color) {
  for (int dv = -1; dv <= 1; ++dv)
    for (int du = -1; du <= 1; ++du)
      if (img.contains(p.v + dv, p.u + du)) img.set(p.v + dv, p.u + du, color);
}

Image attention_image(const TensorF& attention) {
  if (attention.rank() != 3 || attention.dim(0) != 3)
    throw std::invalid_argument("attention_image: expected [3, H, W]");
  const int h = static_cast<int>(attention.dim(1)), w = static_cast<int>(attention.dim(2));
  const Index plane = static_cast<Index>(h) * w;
  Image img(h, w);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const Index k = static_cast<Index>(v) * w + u;
      img.set(v, u, {to_byte(attention[k] * 255.0), to_byte(attention[plane + k] * 255.0),
                     to_byte(attention[2 * plane + k] * 255.0)});
    }
  return img;
}

}  // namespace relmask
