#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ocr {

// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels.
struct Image8 {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::int64_t c = 1;
  std::vector<std::uint8_t> px;

  std::uint8_t at(std::int64_t y, std::int64_t x, std::int64_t ch = 0) const {
    return px[static_cast<std::size_t>((y * w + x) * c + ch)];
  }
  std::uint8_t& at(std::int64_t y, std::int64_t x, std::int64_t ch = 0) {
    return px[static_cast<std::size_t>((y * w + x) * c + ch)];
  }
};

// Float working image in [0,255], same layout.
struct ImageF {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::int64_t c = 1;
  std::vector<float> px;
};

// Binary PNM: P5 (gray) and P6 (RGB), maxval 255.
Image8 read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Image8& img);

Image8 crop(const Image8& img, std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h);

ImageF to_float(const Image8& img);

// Corner-aligned bilinear resize (same convention as the tensor sampler).
ImageF resize_bilinear(const ImageF& img, std::int64_t oh, std::int64_t ow);

// Brightness/contrast/saturation factors; saturation is a no-op on gray.
void color_jitter(ImageF& img, float brightness, float contrast, float saturation);

// Separable Gaussian blur with reflect-101 border handling.
void gaussian_blur(ImageF& img, int ksize, float sigma);

// ITU-R 601 luma for RGB, identity for gray. Output in [0,255].
std::vector<float> to_gray(const ImageF& img);

}  // namespace ocr
