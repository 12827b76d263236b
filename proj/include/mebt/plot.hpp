#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "mebt/common.hpp"
#include "mebt/tensor_io.hpp"

// Dependency-free PNG emission (8-bit RGB, stored-deflate zlib stream) and a
// small scatter renderer for benchmark reports: points, least-squares fit
// lines, tick marks with numeric labels, optional log2 axes.

namespace mebt::plot {

struct Image {
  Index h = 0, w = 0;
  std::vector<std::uint8_t> rgb;  // h*w*3, row-major

  Image() = default;
  Image(Index height, Index width, std::array<std::uint8_t, 3> fill = {255, 255, 255})
      : h(height), w(width), rgb(static_cast<std::size_t>(height * width * 3)) {
    check(height >= 1 && width >= 1, "image: empty canvas");
    for (std::size_t i = 0; i < rgb.size(); i += 3) {
      rgb[i] = fill[0];
      rgb[i + 1] = fill[1];
      rgb[i + 2] = fill[2];
    }
  }

  void set(Index y, Index x, std::array<std::uint8_t, 3> c) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;  // clipped
    const std::size_t at = static_cast<std::size_t>((y * w + x) * 3);
    rgb[at] = c[0];
    rgb[at + 1] = c[1];
    rgb[at + 2] = c[2];
  }

  std::array<std::uint8_t, 3> get(Index y, Index x) const {
    check(y >= 0 && y < h && x >= 0 && x < w, "image: pixel out of range");
    const std::size_t at = static_cast<std::size_t>((y * w + x) * 3);
    return {rgb[at], rgb[at + 1], rgb[at + 2]};
  }
};

namespace detail {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len,
                           std::uint32_t seed = 0xFFFFFFFFu) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = seed;
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c;
}

inline std::uint32_t adler32(const std::uint8_t* data, std::size_t len) {
  std::uint32_t a = 1, b = 0;
  for (std::size_t i = 0; i < len; ++i) {
    a = (a + data[i]) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

inline void put_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>(v & 0xFF));
}

inline void put_chunk(std::string& out, const char type[4], const std::string& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_be32(out, crc32(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()) ^
                    0xFFFFFFFFu);
}

// zlib stream with stored (uncompressed) deflate blocks.
inline std::string zlib_stored(const std::vector<std::uint8_t>& raw) {
  std::string out;
  out.push_back(0x78);
  out.push_back(0x01);
  std::size_t at = 0;
  do {
    const std::size_t n = std::min<std::size_t>(raw.size() - at, 65535);
    const bool last = at + n == raw.size();
    out.push_back(last ? 1 : 0);
    out.push_back(static_cast<char>(n & 0xFF));
    out.push_back(static_cast<char>((n >> 8) & 0xFF));
    out.push_back(static_cast<char>(~n & 0xFF));
    out.push_back(static_cast<char>((~n >> 8) & 0xFF));
    out.append(reinterpret_cast<const char*>(raw.data() + at), n);
    at += n;
  } while (at < raw.size());
  put_be32(out, adler32(raw.data(), raw.size()));
  return out;
}

// 3x5 glyphs for tick labels; bit 14 is the top-left pixel.
inline std::uint16_t glyph(char ch) {
  switch (ch) {
    case '0': return 0b111101101101111;
    case '1': return 0b010110010010111;
    case '2': return 0b111001111100111;
    case '3': return 0b111001111001111;
    case '4': return 0b101101111001001;
    case '5': return 0b111100111001111;
    case '6': return 0b111100111101111;
    case '7': return 0b111001001001001;
    case '8': return 0b111101111101111;
    case '9': return 0b111101111001111;
    case '-': return 0b000000111000000;
    case '+': return 0b000010111010000;
    case '.': return 0b000000000000010;
    case ' ': return 0;
    case '_': return 0b000000000000111;
    case 'a': return 0b111101111101101;
    case 'b': return 0b110101110101110;
    case 'c': return 0b111100100100111;
    case 'd': return 0b110101101101110;
    case 'e': return 0b111100110100111;
    case 'f': return 0b111100110100100;
    case 'g': return 0b111100101101111;
    case 'h': return 0b101101111101101;
    case 'i': return 0b111010010010111;
    case 'j': return 0b001001001101111;
    case 'k': return 0b101101110101101;
    case 'l': return 0b100100100100111;
    case 'm': return 0b101111111101101;
    case 'n': return 0b110101101101101;
    case 'o': return 0b111101101101111;
    case 'p': return 0b111101111100100;
    case 'q': return 0b111101101111001;
    case 'r': return 0b111101110101101;
    case 's': return 0b111100111001111;
    case 't': return 0b111010010010010;
    case 'u': return 0b101101101101111;
    case 'v': return 0b101101101101010;
    case 'w': return 0b101101111111101;
    case 'x': return 0b101101010101101;
    case 'y': return 0b101101010010010;
    case 'z': return 0b111001010100111;
    default: return 0b101010101010101;  // unknown: checker
  }
}

}  // namespace detail

inline std::string encode_png(const Image& img) {
  check(img.rgb.size() == static_cast<std::size_t>(img.h * img.w * 3), "png: bad buffer");
  std::string out("\x89PNG\r\n\x1a\n", 8);

  std::string ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.w));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace
  detail::put_chunk(out, "IHDR", ihdr);

  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.h * (img.w * 3 + 1)));
  for (Index y = 0; y < img.h; ++y) {
    raw.push_back(0);  // filter: none
    const std::size_t at = static_cast<std::size_t>(y * img.w * 3);
    raw.insert(raw.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(at),
               img.rgb.begin() + static_cast<std::ptrdiff_t>(at) + img.w * 3);
  }
  detail::put_chunk(out, "IDAT", detail::zlib_stored(raw));
  detail::put_chunk(out, "IEND", "");
  return out;
}

inline void write_png(const std::string& path, const Image& img) {
  io::write_file(path, encode_png(img));
}

inline void draw_text(Image& img, Index y, Index x, const std::string& text,
                      std::array<std::uint8_t, 3> color = {60, 60, 60}) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    const std::uint16_t g = detail::glyph(text[i]);
    for (Index r = 0; r < 5; ++r)
      for (Index c = 0; c < 3; ++c)
        if (g & (1 << (14 - (r * 3 + c)))) img.set(y + r, x + static_cast<Index>(i) * 4 + c, color);
  }
}

inline std::string format_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

struct Series {
  std::string name;
  std::vector<std::array<double, 2>> points;  // (x, y)
  std::array<std::uint8_t, 3> color = {200, 40, 40};
  bool fit_line = false;  // least squares in plot coordinates
};

// Scatter with optional log2 axes. Margins hold tick labels; each series may
// draw its least-squares line through the (possibly log-transformed) points.
inline Image render_scatter(const std::vector<Series>& series, bool log2_axes,
                            Index height = 480, Index width = 640) {
  check(!series.empty(), "scatter: no series");
  Image img(height, width);
  const Index ml = 56, mr = 16, mt = 16, mb = 36;  // margins
  const Index px0 = ml, px1 = width - mr, py0 = mt, py1 = height - mb;
  check(px1 > px0 + 16 && py1 > py0 + 16, "scatter: canvas too small");

  auto tx = [&](double v) {
    check(!log2_axes || v > 0.0, "scatter: log axis needs positive values");
    return log2_axes ? std::log2(v) : v;
  };

  double xlo = 0, xhi = 0, ylo = 0, yhi = 0;
  bool first = true;
  for (const auto& s : series)
    for (const auto& p : s.points) {
      const double x = tx(p[0]), y = tx(p[1]);
      if (first) {
        xlo = xhi = x;
        ylo = yhi = y;
        first = false;
      }
      xlo = std::min(xlo, x);
      xhi = std::max(xhi, x);
      ylo = std::min(ylo, y);
      yhi = std::max(yhi, y);
    }
  check(!first, "scatter: no points");
  if (xhi - xlo < 1e-12) xhi = xlo + 1.0;
  if (yhi - ylo < 1e-12) yhi = ylo + 1.0;

  auto to_px = [&](double x) {
    return px0 + static_cast<Index>(std::lround((x - xlo) / (xhi - xlo) * (px1 - px0)));
  };
  auto to_py = [&](double y) {
    return py1 - static_cast<Index>(std::lround((y - ylo) / (yhi - ylo) * (py1 - py0)));
  };

  const std::array<std::uint8_t, 3> axis = {30, 30, 30};
  for (Index x = px0; x <= px1; ++x) img.set(py1, x, axis);
  for (Index y = py0; y <= py1; ++y) img.set(y, px0, axis);

  for (int i = 0; i <= 4; ++i) {
    const double fx = xlo + (xhi - xlo) * i / 4.0;
    const double fy = ylo + (yhi - ylo) * i / 4.0;
    const Index xpx = to_px(fx), ypy = to_py(fy);
    for (Index d = 1; d <= 3; ++d) {
      img.set(py1 + d, xpx, axis);
      img.set(ypy, px0 - d, axis);
    }
    const std::string lx = format_tick(log2_axes ? std::exp2(fx) : fx);
    const std::string ly = format_tick(log2_axes ? std::exp2(fy) : fy);
    draw_text(img, py1 + 6, xpx - static_cast<Index>(lx.size()) * 2, lx);
    draw_text(img, ypy - 2, px0 - 6 - static_cast<Index>(ly.size()) * 4, ly);
  }

  Index legend_y = py0 + 4;
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      const Index cx = to_px(tx(p[0])), cy = to_py(tx(p[1]));
      for (Index dy = -1; dy <= 1; ++dy)
        for (Index dx = -1; dx <= 1; ++dx) img.set(cy + dy, cx + dx, s.color);
    }
    if (s.fit_line && s.points.size() >= 2) {
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      for (const auto& p : s.points) {
        const double x = tx(p[0]), y = tx(p[1]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
      }
      const double n = static_cast<double>(s.points.size());
      const double denom = sxx - sx * sx / n;
      if (denom > 1e-12) {
        const double slope = (sxy - sx * sy / n) / denom;
        const double icept = sy / n - slope * sx / n;
        for (Index xp = px0; xp <= px1; ++xp) {
          const double x = xlo + (xhi - xlo) * (xp - px0) / static_cast<double>(px1 - px0);
          img.set(to_py(slope * x + icept), xp, s.color);
        }
      }
    }
    for (Index d = 0; d < 10; ++d) img.set(legend_y + 2, px0 + 8 + d, s.color);
    draw_text(img, legend_y, px0 + 22, s.name);
    legend_y += 10;
  }
  return img;
}

}  // namespace mebt::plot
