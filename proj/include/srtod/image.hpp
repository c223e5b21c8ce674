#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "srtod/tensor.hpp"

namespace srtod {

/// 8-bit interleaved RGB image.
struct ImageU8 {
  int height = 0, width = 0;
  std::vector<uint8_t> data;  // height*width*3, row-major RGB

  uint8_t& at(int y, int x, int c) { return data[size_t((y * width + x) * 3 + c)]; }
  uint8_t at(int y, int x, int c) const { return data[size_t((y * width + x) * 3 + c)]; }
};

/// Lossless binary PPM (P6) read/write. Throws StorageError on failure.
void write_ppm(const std::filesystem::path& path, const ImageU8& img);
ImageU8 read_ppm(const std::filesystem::path& path);

/// Grayscale {1,H,W} map rendered through a heat colormap; values are
/// min-max normalized unless the map is constant.
ImageU8 heatmap_u8(const Tensor<float>& map);

template <typename T>
Tensor<T> image_to_tensor(const ImageU8& img) {
  Tensor<T> t({3, img.height, img.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t.at(c, y, x) = T(img.at(y, x, c)) / T(255);
  return t;
}

template <typename T>
ImageU8 tensor_to_image(const Tensor<T>& t) {
  if (t.rank() != 3 || t.dim(0) != 3)
    throw ShapeError("tensor_to_image: expected {3,H,W}");
  ImageU8 img;
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.data.resize(size_t(img.height) * img.width * 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double v = double(t.at(c, y, x)) * 255.0;
        v = v < 0 ? 0 : (v > 255 ? 255 : v);
        img.at(y, x, c) = uint8_t(std::lround(v));
      }
  return img;
}

}  // namespace srtod
