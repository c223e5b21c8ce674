#include "srtod/image.hpp"

#include <cmath>
#include <fstream>

#include "srtod/errors.hpp"

namespace srtod {

void write_ppm(const std::filesystem::path& path, const ImageU8& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw StorageError("cannot open for writing: " + path.string());
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.data.data()),
          std::streamsize(img.data.size()));
  if (!f) throw StorageError("write failed: " + path.string());
}

ImageU8 read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw StorageError("cannot open: " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P6") throw StorageError("not a binary PPM: " + path.string());
  auto skip_ws_comments = [&f]() {
    while (true) {
      int c = f.peek();
      if (c == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(c)) {
        f.get();
      } else {
        break;
      }
    }
  };
  int w = 0, h = 0, maxval = 0;
  skip_ws_comments();
  f >> w;
  skip_ws_comments();
  f >> h;
  skip_ws_comments();
  f >> maxval;
  if (!f || w <= 0 || h <= 0 || maxval != 255)
    throw StorageError("bad PPM header: " + path.string());
  f.get();  // single whitespace after maxval
  ImageU8 img;
  img.width = w;
  img.height = h;
  img.data.resize(size_t(w) * h * 3);
  f.read(reinterpret_cast<char*>(img.data.data()), std::streamsize(img.data.size()));
  if (!f) throw StorageError("truncated PPM: " + path.string());
  return img;
}

ImageU8 heatmap_u8(const Tensor<float>& map) {
  if (map.rank() != 3 || map.dim(0) != 1)
    throw ShapeError("heatmap_u8: expected {1,H,W}");
  const int H = map.dim(1), W = map.dim(2);
  float lo = map.data[0], hi = map.data[0];
  for (float v : map.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float range = hi - lo;
  ImageU8 img;
  img.height = H;
  img.width = W;
  img.data.resize(size_t(H) * W * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const float v = range > 0 ? (map.at(0, y, x) - lo) / range : 0.0f;
      // black -> blue -> red -> yellow ramp
      float r, g, b;
      if (v < 0.33f) {
        r = 0; g = 0; b = v / 0.33f;
      } else if (v < 0.66f) {
        r = (v - 0.33f) / 0.33f; g = 0; b = 1.0f - (v - 0.33f) / 0.33f;
      } else {
        r = 1.0f; g = (v - 0.66f) / 0.34f; b = 0;
      }
      img.at(y, x, 0) = uint8_t(std::lround(255.0f * std::min(1.0f, r)));
      img.at(y, x, 1) = uint8_t(std::lround(255.0f * std::min(1.0f, g)));
      img.at(y, x, 2) = uint8_t(std::lround(255.0f * std::min(1.0f, b)));
    }
  return img;
}

}  // namespace srtod
