#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cada/common.hpp"

namespace cada {

// Minimal PNG codec for the formats this project writes: 8-bit grayscale
// (color type 0) and 8-bit RGB (color type 2), non-interlaced.
namespace png {

inline void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t get_be32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) |
         uint32_t(p[3]);
}

inline void append_chunk(std::vector<uint8_t>& out, const char type[4],
                         const std::vector<uint8_t>& data) {
  put_be32(out, static_cast<uint32_t>(data.size()));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uint32_t crc = static_cast<uint32_t>(
      ::crc32(::crc32(0, out.data() + start, 4), data.data(),
              static_cast<uInt>(data.size())));
  put_be32(out, crc);
}

inline void write_file(const std::string& path, int64_t width, int64_t height,
                       int channels, const std::vector<uint8_t>& pixels) {
  require(channels == 1 || channels == 3, "png: only gray or RGB supported");
  require(static_cast<int64_t>(pixels.size()) == width * height * channels,
          "png: pixel buffer size mismatch");
  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

  std::vector<uint8_t> ihdr;
  put_be32(ihdr, static_cast<uint32_t>(width));
  put_be32(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);                                  // bit depth
  ihdr.push_back(channels == 1 ? 0 : 2);              // color type
  ihdr.push_back(0);                                  // compression
  ihdr.push_back(0);                                  // filter method
  ihdr.push_back(0);                                  // no interlace
  append_chunk(out, "IHDR", ihdr);

  const size_t row = static_cast<size_t>(width) * channels;
  std::vector<uint8_t> raw((row + 1) * height);
  for (int64_t y = 0; y < height; ++y) {
    raw[y * (row + 1)] = 0;  // filter type 0 per row
    std::memcpy(raw.data() + y * (row + 1) + 1, pixels.data() + y * row, row);
  }
  uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  require(::compress2(compressed.data(), &bound, raw.data(),
                      static_cast<uLong>(raw.size()), 6) == Z_OK,
          "png: deflate failed");
  compressed.resize(bound);
  append_chunk(out, "IDAT", compressed);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  require(f.good(), "png: cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  require(f.good(), "png: write failed for '" + path + "'");
}

struct Image {
  int64_t width = 0, height = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;  // row-major, interleaved
};

inline Image read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "png: cannot open '" + path + "'");
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
  require(buf.size() > 8, "png: '" + path + "' truncated");
  const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  require(std::memcmp(buf.data(), sig, 8) == 0, "png: '" + path + "' is not a PNG file");

  Image img;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 8 <= buf.size() && !saw_iend) {
    const uint32_t len = get_be32(buf.data() + pos);
    require(pos + 12 + len <= buf.size(), "png: '" + path + "' corrupt chunk");
    const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
    const uint8_t* data = buf.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      require(len == 13, "png: bad IHDR");
      img.width = get_be32(data);
      img.height = get_be32(data + 4);
      require(data[8] == 8, "png: only 8-bit depth supported");
      require(data[9] == 0 || data[9] == 2, "png: only gray/RGB supported");
      require(data[12] == 0, "png: interlaced images not supported");
      img.channels = data[9] == 0 ? 1 : 3;
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  require(saw_ihdr && saw_iend && !idat.empty(), "png: '" + path + "' missing chunks");

  const size_t row = static_cast<size_t>(img.width) * img.channels;
  std::vector<uint8_t> raw((row + 1) * img.height);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  require(::uncompress(raw.data(), &raw_len, idat.data(),
                       static_cast<uLong>(idat.size())) == Z_OK &&
              raw_len == raw.size(),
          "png: inflate failed for '" + path + "'");

  // undo per-row filtering (types 0-4)
  img.pixels.assign(row * img.height, 0);
  const int bpp = img.channels;
  auto paeth = [](int a, int b, int c) {
    const int p = a + b - c, pa = std::abs(p - a), pb = std::abs(p - b),
              pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    return pb <= pc ? b : c;
  };
  for (int64_t y = 0; y < img.height; ++y) {
    const uint8_t filter = raw[y * (row + 1)];
    const uint8_t* src = raw.data() + y * (row + 1) + 1;
    uint8_t* dst = img.pixels.data() + y * row;
    const uint8_t* up = y > 0 ? img.pixels.data() + (y - 1) * row : nullptr;
    for (size_t x = 0; x < row; ++x) {
      const int a = x >= static_cast<size_t>(bpp) ? dst[x - bpp] : 0;
      const int b = up ? up[x] : 0;
      const int c = (up && x >= static_cast<size_t>(bpp)) ? up[x - bpp] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: fail("png: unknown filter type in '" + path + "'");
      }
      dst[x] = static_cast<uint8_t>(v & 0xff);
    }
  }
  return img;
}

}  // namespace png
}  // namespace cada
