#pragma once

#include <span>

#include "relmask/image.hpp"
#include "relmask/scene.hpp"
#include "relmask/tensor.hpp"

namespace relmask {

/// Three-stop linear ramp: 0 -> (68,1,84), 0.5 -> (33,145,140),
/// 1 -> (253,231,37). t is clamped to [0, 1]; channels are rounded.
Rgb ramp(double t);

/// Min-max normalizes `map` (row-major, height x width) through ramp().
/// Only maximal entries reach the top stop; the rest are capped just below it
/// so the argmax stays the brightest pixel after rounding. A constant map
/// renders as the first stop.
Image render_heatmap(std::span<const float> map, int height, int width);

/// Fills the 3x3 square centered on p, clipped to the image.
void draw_marker(Image& img, Pixel p, Rgb color = {255, 0, 0});

/// [3, H, W] values in [0, 1] to an RGB image.
Image attention_image(const TensorF& attention);

}  // namespace relmask
