#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <mebt/plot.hpp>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

using namespace mebt;

namespace {

std::uint32_t be32(const std::string& s, std::size_t at) {
  return (static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[at])) << 24) |
         (static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[at + 1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[at + 2])) << 8) |
         static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[at + 3]));
}

struct Chunk {
  std::string type;
  std::string data;
  std::uint32_t crc;
};

std::vector<Chunk> parse_chunks(const std::string& png) {
  REQUIRE(png.size() > 8);
  REQUIRE(png.substr(0, 8) == std::string("\x89PNG\r\n\x1a\n", 8));
  std::vector<Chunk> out;
  std::size_t at = 8;
  while (at + 12 <= png.size()) {
    const std::uint32_t len = be32(png, at);
    Chunk c;
    c.type = png.substr(at + 4, 4);
    c.data = png.substr(at + 8, len);
    c.crc = be32(png, at + 8 + len);
    out.push_back(c);
    at += 12 + len;
  }
  REQUIRE(at == png.size());
  return out;
}

// Bitwise CRC-32 (no table) as an independent reference implementation.
std::uint32_t reference_crc32(const std::string& bytes) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (char ch : bytes) {
    crc ^= static_cast<std::uint8_t>(ch);
    for (int k = 0; k < 8; ++k) crc = (crc & 1u) ? 0xEDB88320u ^ (crc >> 1) : crc >> 1;
  }
  return crc ^ 0xFFFFFFFFu;
}

// Decodes a zlib stream made of stored deflate blocks.
std::vector<std::uint8_t> inflate_stored(const std::string& z) {
  REQUIRE(z.size() >= 6);
  CHECK((static_cast<std::uint8_t>(z[0]) & 0x0F) == 8);  // deflate method
  std::vector<std::uint8_t> out;
  std::size_t at = 2;
  bool final = false;
  while (!final) {
    REQUIRE(at + 5 <= z.size());
    const std::uint8_t hdr = static_cast<std::uint8_t>(z[at]);
    final = hdr & 1u;
    REQUIRE((hdr >> 1) == 0);  // stored block
    const std::size_t len = static_cast<std::uint8_t>(z[at + 1]) |
                            (static_cast<std::size_t>(static_cast<std::uint8_t>(z[at + 2])) << 8);
    const std::size_t nlen = static_cast<std::uint8_t>(z[at + 3]) |
                             (static_cast<std::size_t>(static_cast<std::uint8_t>(z[at + 4])) << 8);
    REQUIRE((len ^ nlen) == 0xFFFF);
    REQUIRE(at + 5 + len <= z.size());
    for (std::size_t i = 0; i < len; ++i)
      out.push_back(static_cast<std::uint8_t>(z[at + 5 + i]));
    at += 5 + len;
  }
  REQUIRE(at + 4 == z.size());  // adler trailer
  return out;
}

}  // namespace

TEST_CASE("png encoding round-trips pixels through a stored zlib stream") {
  plot::Image img(5, 7);
  img.set(0, 0, {255, 0, 0});
  img.set(4, 6, {0, 0, 255});
  img.set(2, 3, {10, 20, 30});
  const auto png = plot::encode_png(img);
  const auto chunks = parse_chunks(png);

  REQUIRE(chunks.size() == 3);
  CHECK(chunks[0].type == "IHDR");
  CHECK(chunks[1].type == "IDAT");
  CHECK(chunks[2].type == "IEND");

  SUBCASE("header fields") {
    const auto& ihdr = chunks[0].data;
    REQUIRE(ihdr.size() == 13);
    CHECK(be32(ihdr, 0) == 7);  // width
    CHECK(be32(ihdr, 4) == 5);  // height
    CHECK(ihdr[8] == 8);        // bit depth
    CHECK(ihdr[9] == 2);        // truecolor
  }

  SUBCASE("chunk CRCs validate against an independent implementation") {
    for (const auto& c : chunks) CHECK(c.crc == reference_crc32(c.type + c.data));
  }

  SUBCASE("pixel data survives the stored-deflate round trip") {
    const auto raw = inflate_stored(chunks[1].data);
    REQUIRE(raw.size() == static_cast<std::size_t>(5 * (7 * 3 + 1)));
    for (Index y = 0; y < 5; ++y) CHECK(raw[static_cast<std::size_t>(y * 22)] == 0);  // filter
    auto px = [&](Index y, Index x) {
      const std::size_t at = static_cast<std::size_t>(y * 22 + 1 + x * 3);
      return std::array<std::uint8_t, 3>{raw[at], raw[at + 1], raw[at + 2]};
    };
    CHECK(px(0, 0) == std::array<std::uint8_t, 3>{255, 0, 0});
    CHECK(px(4, 6) == std::array<std::uint8_t, 3>{0, 0, 255});
    CHECK(px(2, 3) == std::array<std::uint8_t, 3>{10, 20, 30});
    CHECK(px(1, 1) == std::array<std::uint8_t, 3>{255, 255, 255});
  }
}

TEST_CASE("large images split into multiple stored blocks") {
  plot::Image img(40, 600);  // raw size 40 * 1801 = 72040 > 65535
  img.set(39, 599, {1, 2, 3});
  const auto png = plot::encode_png(img);
  const auto chunks = parse_chunks(png);
  const auto raw = inflate_stored(chunks[1].data);
  REQUIRE(raw.size() == static_cast<std::size_t>(40 * (600 * 3 + 1)));
  CHECK(raw[raw.size() - 3] == 1);
  CHECK(raw[raw.size() - 2] == 2);
  CHECK(raw[raw.size() - 1] == 3);
}

TEST_CASE("scatter rendering marks points and stays inside the canvas") {
  plot::Series s;
  s.name = "mebt";
  s.color = {200, 40, 40};
  s.fit_line = true;
  for (double n : {512.0, 1024.0, 2048.0, 4096.0}) s.points.push_back({n, 2.0 * n});

  const auto img = plot::render_scatter({s}, true, 240, 320);
  CHECK(img.h == 240);
  CHECK(img.w == 320);

  Index colored = 0, dark = 0;
  for (Index y = 0; y < img.h; ++y)
    for (Index x = 0; x < img.w; ++x) {
      const auto c = img.get(y, x);
      if (c[0] == 200 && c[1] == 40 && c[2] == 40) ++colored;
      if (c[0] == 30 && c[1] == 30 && c[2] == 30) ++dark;
    }
  CHECK(colored >= 4 * 9);  // four 3x3 markers plus fit line and legend swatch
  CHECK(dark > 0);          // axes drawn

  SUBCASE("log axes reject non-positive points") {
    plot::Series bad;
    bad.points.push_back({-1.0, 2.0});
    CHECK_THROWS_AS(plot::render_scatter({bad}, true), LogicError);
  }

  SUBCASE("empty series list is rejected") {
    CHECK_THROWS_AS(plot::render_scatter({}, false), LogicError);
  }
}
