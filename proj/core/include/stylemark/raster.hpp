#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

#include "stylemark/dataset.hpp"
#include "stylemark/image.hpp"

namespace stylemark::raster {

using Color = std::array<std::uint8_t, 3>;

void fill_rect(Image& img, int x0, int y0, int x1, int y1, Color color);

// Even-odd scanline fill sampled at pixel centers.
void fill_polygon(Image& img, std::span<const Point2> polygon, Color color);

void fill_ellipse(Image& img, Point2 center, double rx, double ry, double degrees, Color color);

// Square-brush line of the given width.
void draw_line(Image& img, Point2 a, Point2 b, int width, Color color);

// Built-in 5x7 bitmap font; lowercase is drawn as uppercase and unknown
// characters as blanks. `scale` multiplies the glyph cell (6x8 with spacing).
void draw_text(Image& img, int x, int y, std::string_view text, Color color, int scale = 1);

int text_width(std::string_view text, int scale = 1);
inline constexpr int kGlyphHeight = 7;

}  // namespace stylemark::raster
