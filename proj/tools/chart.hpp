#pragma once

// Tiny raster charts written as PPM files: filled rectangles, sampled
// polylines and a 3x5 bitmap font (enough for axis ticks and scheme
// letters). No dependencies beyond the image writer.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "vseg/image_io.hpp"
#include "vseg/types.hpp"

namespace chart {

struct Rgb {
  double r, g, b;
};

inline constexpr Rgb kInk{0.15, 0.16, 0.2};
inline constexpr Rgb kGrid{0.85, 0.87, 0.9};
inline constexpr Rgb kBlue{0.22, 0.45, 0.78};
inline constexpr Rgb kOrange{0.9, 0.55, 0.18};

// 3x5 glyphs, row-major; '1' marks an inked cell
struct Glyph {
  char ch;
  const char* bits;
};

inline constexpr Glyph kFont[] = {
    {'0', "111101101101111"}, {'1', "010110010010111"},
    {'2', "111001111100111"}, {'3', "111001111001111"},
    {'4', "101101111001001"}, {'5', "111100111001111"},
    {'6', "111100111101111"}, {'7', "111001001010010"},
    {'8', "111101111101111"}, {'9', "111101111001111"},
    {'.', "000000000000010"}, {'-', "000000111000000"},
    {'%', "101001010100101"}, {' ', "000000000000000"},
    {'a', "010101111101101"}, {'b', "110101110101110"},
    {'c', "011100100100011"}, {'d', "110101101101110"},
    {'e', "111100110100111"}, {'f', "111100110100100"},
    {'g', "011100101101011"}, {'h', "101101111101101"},
    {'i', "111010010010111"}, {'j', "001001001101010"},
    {'k', "101110100110101"}, {'l', "100100100100111"},
    {'m', "101111111101101"}, {'n', "110101101101101"},
    {'o', "010101101101010"}, {'p', "110101110100100"},
    {'q', "010101101110011"}, {'r', "110101110110101"},
    {'s', "011100010001110"}, {'t', "111010010010010"},
    {'u', "101101101101111"}, {'v', "101101101101010"},
    {'w', "101101111111101"}, {'x', "101101010101101"},
    {'y', "101101010010010"}, {'z', "111001010100111"},
};

class Canvas {
 public:
  Canvas(int h, int w) : img_(3, h, w) {
    for (int c = 0; c < 3; ++c) img_[c].setOnes();
  }
  int height() const { return img_.height(); }
  int width() const { return img_.width(); }

  void set(int y, int x, Rgb c) {
    if (y < 0 || y >= height() || x < 0 || x >= width()) return;
    img_[0](y, x) = c.r;
    img_[1](y, x) = c.g;
    img_[2](y, x) = c.b;
  }

  void fill(int y0, int x0, int y1, int x1, Rgb c) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
      for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(y, x, c);
  }

  void line(double x0, double y0, double x1, double y1, Rgb c) {
    const int n =
        2 * (int)std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
    for (int i = 0; i <= n; ++i) {
      const double t = i / (double)n;
      set((int)std::lround(y0 + t * (y1 - y0)),
          (int)std::lround(x0 + t * (x1 - x0)), c);
    }
  }

  void text(int y, int x, const std::string& s, Rgb c = kInk) {
    for (char raw : s) {
      const char ch = (char)std::tolower((unsigned char)raw);
      for (const Glyph& g : kFont) {
        if (g.ch != ch) continue;
        for (int i = 0; i < 15; ++i)
          if (g.bits[i] == '1') set(y + i / 3, x + i % 3, c);
        break;
      }
      x += 4;
    }
  }

  void save(const std::filesystem::path& p) const { vseg::io::write_ppm(p, img_); }

 private:
  vseg::Planes img_;
};

inline std::string fmt(double v, const char* spec = "%.2f") {
  char buf[32];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

/// Per-pair temporal consistency curve with a mean rule.
inline void tc_curve(const std::filesystem::path& out,
                     const std::vector<double>& per_pair, double mean_tc) {
  const int H = 220, W = 360, l = 40, r = 12, top = 18, bot = 26;
  Canvas cv(H, W);
  double lo = 1.0, hi = 1.0;
  for (double v : per_pair) lo = std::min(lo, v);
  lo = std::min(lo, mean_tc);
  lo = std::max(0.0, std::floor(lo * 10.0) / 10.0 - 0.1);
  if (hi - lo < 0.2) lo = std::max(0.0, hi - 0.2);
  const auto ypix = [&](double v) {
    return top + (hi - v) / (hi - lo) * (H - top - bot);
  };
  const auto xpix = [&](double i) {
    const double n = std::max<size_t>(per_pair.size(), 2) - 1.0;
    return l + i / n * (W - l - r);
  };
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + k * (hi - lo) / 4;
    cv.line(l, ypix(v), W - r, ypix(v), kGrid);
    cv.text((int)ypix(v) - 2, 6, fmt(v), kInk);
  }
  cv.line(l, top, l, H - bot, kInk);
  cv.line(l, H - bot, W - r, H - bot, kInk);
  cv.text(4, l, "tc per frame pair", kInk);
  cv.text(H - 12, W / 2 - 10, "pair", kInk);
  const int step = std::max<int>(1, (int)per_pair.size() / 6);
  for (size_t i = 0; i < per_pair.size(); i += step)
    cv.text(H - bot + 4, (int)xpix((double)i) - 2, fmt((double)i, "%.0f"));
  cv.line(l, ypix(mean_tc), W - r, ypix(mean_tc), kOrange);
  cv.text((int)ypix(mean_tc) - 7, W - r - 40, "mean " + fmt(mean_tc), kOrange);
  for (size_t i = 0; i + 1 < per_pair.size(); ++i)
    cv.line(xpix((double)i), ypix(per_pair[i]), xpix((double)i + 1),
            ypix(per_pair[i + 1]), kBlue);
  for (size_t i = 0; i < per_pair.size(); ++i) {
    const int x = (int)xpix((double)i), y = (int)ypix(per_pair[i]);
    cv.fill(y - 1, x - 1, y + 1, x + 1, kBlue);
  }
  cv.save(out);
}

struct BarRow {
  std::string label;
  double miou = 0, tc = 0;
};

/// Grouped miou/tc bars, one group per ablation scheme.
inline void ablation_bars(const std::filesystem::path& out,
                          const std::vector<BarRow>& rows) {
  const int group = 34, l = 40, r = 12, top = 20, bot = 24, H = 220;
  const int W = l + r + group * std::max<int>((int)rows.size(), 1);
  Canvas cv(H, W);
  const auto ypix = [&](double v) {
    return top + (1.0 - std::clamp(v, 0.0, 1.0)) * (H - top - bot);
  };
  for (int k = 0; k <= 4; ++k) {
    const double v = k / 4.0;
    cv.line(l, ypix(v), W - r, ypix(v), kGrid);
    cv.text((int)ypix(v) - 2, 6, fmt(v), kInk);
  }
  cv.fill(6, l, 10, l + 4, kBlue);
  cv.text(4, l + 8, "miou", kInk);
  cv.fill(6, l + 34, 10, l + 38, kOrange);
  cv.text(4, l + 42, "tc", kInk);
  for (size_t i = 0; i < rows.size(); ++i) {
    const int x0 = l + (int)i * group + 6;
    cv.fill((int)ypix(rows[i].miou), x0, H - bot, x0 + 9, kBlue);
    cv.fill((int)ypix(rows[i].tc), x0 + 12, H - bot, x0 + 21, kOrange);
    cv.text(H - bot + 6, x0 + 9, rows[i].label, kInk);
  }
  cv.line(l, top, l, H - bot, kInk);
  cv.line(l, H - bot, W - r, H - bot, kInk);
  cv.save(out);
}

}  // namespace chart
