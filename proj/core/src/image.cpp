// SPDX-License-Identifier: Apache-2.0
#include "affnet/image.hpp"

#include <fstream>

#include "affnet/common.hpp"

namespace affnet {

Image Image::filled(int width, int height, std::uint8_t value) {
  Image img;
  img.width = width;
  img.height = height;
  img.rgb.assign(static_cast<std::size_t>(width) * height * 3, value);
  return img;
}

void Image::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  std::uint8_t* p = &rgb[(static_cast<std::size_t>(y) * width + x) * 3];
  p[0] = r;
  p[1] = g;
  p[2] = b;
}

namespace {

// Skips whitespace and '#' comments between PPM header tokens.
int next_header_int(std::istream& in, const std::filesystem::path& path) {
  while (true) {
    const int c = in.peek();
    if (c == EOF) throw IoError("truncated PPM header in " + path.string());
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    break;
  }
  int value = 0;
  in >> value;
  if (!in) throw IoError("malformed PPM header in " + path.string());
  return value;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image file " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '6') throw IoError("not a binary PPM (P6): " + path.string());
  const int w = next_header_int(in, path);
  const int h = next_header_int(in, path);
  const int maxval = next_header_int(in, path);
  if (w <= 0 || h <= 0) throw IoError("bad PPM dimensions in " + path.string());
  if (maxval != 255) throw IoError("only 8-bit PPM supported: " + path.string());
  in.get();  // single whitespace after maxval
  Image img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
    throw IoError("truncated PPM payload in " + path.string());
  }
  return img;
}

void write_ppm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image file " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace affnet
