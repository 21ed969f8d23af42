#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "lldiff/core/image_planes.hpp"
#include "lldiff/io/quantize.hpp"

namespace lldiff::io {

/// Writes a [1,C,H,W] image (C = 1 gray, C = 3 RGB) as an 8-bit PNG.
template <class T>
void write_png(const std::filesystem::path& path, const ImagePlanes<T>& img) {
  require(img.batch() == 1 && (img.channels() == 1 || img.channels() == 3), ErrorCode::shape_mismatch,
          "PNG output needs a [1,1|3,H,W] image, got " + img.shape().str());
  const int c = img.channels();
  std::vector<unsigned char> buf(img.size());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int k = 0; k < c; ++k)
        buf[(static_cast<std::size_t>(y) * img.width() + x) * c + k] = to_u8(static_cast<double>(img(0, k, y, x)));

  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::io, "cannot write PNG " + path.string() + ": " + msg);
  }
}

/// Reads an 8-bit gray or RGB PNG into [1,C,H,W] values in [0,1]. Other
/// colour types are converted to RGB by libpng.
template <class T>
ImagePlanes<T> read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw Error(ErrorCode::io, "cannot read PNG " + path.string() + ": " + image.message);
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int c = gray ? 1 : 3;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::format, "corrupt PNG " + path.string() + ": " + msg);
  }
  const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
  ImagePlanes<T> out(Shape{1, c, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k)
        out(0, k, y, x) = static_cast<T>(buf[(static_cast<std::size_t>(y) * w + x) * c + k] / 255.0);
  return out;
}

}  // namespace lldiff::io
