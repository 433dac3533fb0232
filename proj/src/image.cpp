#include "ocr/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace ocr {

namespace {

int pnm_token(std::istream& in) {
  // Reads one whitespace-delimited integer, skipping '#' comments.
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    } else {
      ch = in.get();
    }
  }
  if (ch == EOF) throw std::runtime_error("pnm: truncated header");
  int value = 0;
  bool any = false;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    any = true;
    ch = in.get();
  }
  if (!any) throw std::runtime_error("pnm: malformed header token");
  return value;
}

float reflect101(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  std::int64_t p = i;
  while (p < 0 || p >= n) {
    if (p < 0) p = -p;
    if (p >= n) p = 2 * (n - 1) - p;
  }
  return static_cast<float>(p);
}

}  // namespace

Image8 read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_pnm: cannot open " + path);
  char p, kind;
  f.get(p);
  f.get(kind);
  if (p != 'P' || (kind != '5' && kind != '6')) throw std::runtime_error("read_pnm: not a binary PGM/PPM: " + path);
  Image8 img;
  img.c = kind == '5' ? 1 : 3;
  img.w = pnm_token(f);
  img.h = pnm_token(f);
  const int maxval = pnm_token(f);
  if (maxval != 255) throw std::runtime_error("read_pnm: only maxval 255 supported: " + path);
  img.px.resize(static_cast<std::size_t>(img.h * img.w * img.c));
  f.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.px.size()))
    throw std::runtime_error("read_pnm: truncated pixel data: " + path);
  return img;
}

void write_pnm(const std::string& path, const Image8& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pnm: cannot open " + path);
  f << (img.c == 1 ? "P5" : "P6") << "\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
  if (!f) throw std::runtime_error("write_pnm: short write: " + path);
}

Image8 crop(const Image8& img, std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h) {
  if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > img.w || y + h > img.h)
    throw std::out_of_range("crop: box (" + std::to_string(x) + "," + std::to_string(y) + "," + std::to_string(w) +
                            "," + std::to_string(h) + ") outside " + std::to_string(img.w) + "x" +
                            std::to_string(img.h));
  Image8 out;
  out.h = h;
  out.w = w;
  out.c = img.c;
  out.px.resize(static_cast<std::size_t>(h * w * img.c));
  for (std::int64_t r = 0; r < h; ++r) {
    const std::uint8_t* src = img.px.data() + ((y + r) * img.w + x) * img.c;
    std::copy(src, src + w * img.c, out.px.begin() + r * w * img.c);
  }
  return out;
}

ImageF to_float(const Image8& img) {
  ImageF out;
  out.h = img.h;
  out.w = img.w;
  out.c = img.c;
  out.px.assign(img.px.begin(), img.px.end());
  return out;
}

ImageF resize_bilinear(const ImageF& img, std::int64_t oh, std::int64_t ow) {
  ImageF out;
  out.h = oh;
  out.w = ow;
  out.c = img.c;
  out.px.resize(static_cast<std::size_t>(oh * ow * img.c));
  const float sy = oh > 1 ? static_cast<float>(img.h - 1) / static_cast<float>(oh - 1) : 0.f;
  const float sx = ow > 1 ? static_cast<float>(img.w - 1) / static_cast<float>(ow - 1) : 0.f;
  for (std::int64_t y = 0; y < oh; ++y) {
    const float fy = static_cast<float>(y) * sy;
    const std::int64_t y0 = std::min(static_cast<std::int64_t>(fy), img.h - 1);
    const std::int64_t y1 = std::min(y0 + 1, img.h - 1);
    const float wy = fy - static_cast<float>(y0);
    for (std::int64_t x = 0; x < ow; ++x) {
      const float fx = static_cast<float>(x) * sx;
      const std::int64_t x0 = std::min(static_cast<std::int64_t>(fx), img.w - 1);
      const std::int64_t x1 = std::min(x0 + 1, img.w - 1);
      const float wx = fx - static_cast<float>(x0);
      for (std::int64_t ch = 0; ch < img.c; ++ch) {
        const float v00 = img.px[static_cast<std::size_t>((y0 * img.w + x0) * img.c + ch)];
        const float v01 = img.px[static_cast<std::size_t>((y0 * img.w + x1) * img.c + ch)];
        const float v10 = img.px[static_cast<std::size_t>((y1 * img.w + x0) * img.c + ch)];
        const float v11 = img.px[static_cast<std::size_t>((y1 * img.w + x1) * img.c + ch)];
        out.px[static_cast<std::size_t>((y * ow + x) * img.c + ch)] =
            (1.f - wy) * ((1.f - wx) * v00 + wx * v01) + wy * ((1.f - wx) * v10 + wx * v11);
      }
    }
  }
  return out;
}

void color_jitter(ImageF& img, float brightness, float contrast, float saturation) {
  auto clamp255 = [](float v) { return std::min(std::max(v, 0.f), 255.f); };
  // Brightness: scale.
  for (auto& v : img.px) v = clamp255(v * brightness);
  // Contrast: blend with the mean gray level.
  float mean = 0.f;
  if (img.c == 3) {
    for (std::int64_t i = 0; i < img.h * img.w; ++i)
      mean += 0.299f * img.px[static_cast<std::size_t>(i * 3)] + 0.587f * img.px[static_cast<std::size_t>(i * 3 + 1)] +
              0.114f * img.px[static_cast<std::size_t>(i * 3 + 2)];
    mean /= static_cast<float>(img.h * img.w);
  } else {
    for (auto v : img.px) mean += v;
    mean /= static_cast<float>(img.px.size());
  }
  for (auto& v : img.px) v = clamp255(contrast * v + (1.f - contrast) * mean);
  // Saturation: blend with per-pixel gray.
  if (img.c == 3) {
    for (std::int64_t i = 0; i < img.h * img.w; ++i) {
      float* p = img.px.data() + i * 3;
      const float g = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
      for (int ch = 0; ch < 3; ++ch) p[ch] = clamp255(saturation * p[ch] + (1.f - saturation) * g);
    }
  }
}

void gaussian_blur(ImageF& img, int ksize, float sigma) {
  if (ksize < 3 || ksize % 2 == 0) throw std::invalid_argument("gaussian_blur: kernel size must be odd and >= 3");
  const int r = ksize / 2;
  std::vector<float> k(static_cast<std::size_t>(ksize));
  float sum = 0.f;
  for (int i = -r; i <= r; ++i) {
    const float v = std::exp(-static_cast<float>(i * i) / (2.f * sigma * sigma));
    k[static_cast<std::size_t>(i + r)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;

  ImageF tmp = img;
  // Horizontal pass.
  for (std::int64_t y = 0; y < img.h; ++y)
    for (std::int64_t x = 0; x < img.w; ++x)
      for (std::int64_t ch = 0; ch < img.c; ++ch) {
        float acc = 0.f;
        for (int i = -r; i <= r; ++i) {
          const auto xx = static_cast<std::int64_t>(reflect101(x + i, img.w));
          acc += k[static_cast<std::size_t>(i + r)] * img.px[static_cast<std::size_t>((y * img.w + xx) * img.c + ch)];
        }
        tmp.px[static_cast<std::size_t>((y * img.w + x) * img.c + ch)] = acc;
      }
  // Vertical pass.
  for (std::int64_t y = 0; y < img.h; ++y)
    for (std::int64_t x = 0; x < img.w; ++x)
      for (std::int64_t ch = 0; ch < img.c; ++ch) {
        float acc = 0.f;
        for (int i = -r; i <= r; ++i) {
          const auto yy = static_cast<std::int64_t>(reflect101(y + i, img.h));
          acc += k[static_cast<std::size_t>(i + r)] * tmp.px[static_cast<std::size_t>((yy * img.w + x) * img.c + ch)];
        }
        img.px[static_cast<std::size_t>((y * img.w + x) * img.c + ch)] = acc;
      }
}

std::vector<float> to_gray(const ImageF& img) {
  std::vector<float> out(static_cast<std::size_t>(img.h * img.w));
  if (img.c == 1) {
    out.assign(img.px.begin(), img.px.end());
  } else {
    for (std::int64_t i = 0; i < img.h * img.w; ++i)
      out[static_cast<std::size_t>(i)] = 0.299f * img.px[static_cast<std::size_t>(i * 3)] +
                                         0.587f * img.px[static_cast<std::size_t>(i * 3 + 1)] +
                                         0.114f * img.px[static_cast<std::size_t>(i * 3 + 2)];
  }
  return out;
}

}  // namespace ocr
