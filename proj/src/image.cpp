#include "sentinel/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "sentinel/core.hpp"

namespace sentinel {

ImageF to_float(const ImageU8& img) {
  ImageF out(img.h, img.w);
  const float k = 1.f / 255.f;
  for (size_t i = 0; i < img.px.size(); ++i) out.px[i] = img.px[i] * k;
  return out;
}

ImageU8 to_u8(const ImageF& img) {
  ImageU8 out;
  out.h = img.h;
  out.w = img.w;
  out.px.resize(img.px.size());
  for (size_t i = 0; i < img.px.size(); ++i) {
    float v = std::clamp(img.px[i], 0.f, 1.f);
    out.px[i] = static_cast<uint8_t>(std::lround(v * 255.f));
  }
  return out;
}

ImageU8 load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw RuntimeFailure("cannot decode image: " + path.string());
  }
  ImageU8 out;
  out.h = bgr.rows;
  out.w = bgr.cols;
  out.px.resize(static_cast<size_t>(out.h) * out.w * 3);
  for (int y = 0; y < out.h; ++y) {
    const uint8_t* row = bgr.ptr<uint8_t>(y);
    uint8_t* dst = out.px.data() + static_cast<size_t>(y) * out.w * 3;
    for (int x = 0; x < out.w; ++x) {
      dst[x * 3 + 0] = row[x * 3 + 2];
      dst[x * 3 + 1] = row[x * 3 + 1];
      dst[x * 3 + 2] = row[x * 3 + 0];
    }
  }
  return out;
}

void save_png(const std::filesystem::path& path, const ImageF& img) {
  ImageU8 u = to_u8(img);
  cv::Mat bgr(u.h, u.w, CV_8UC3);
  for (int y = 0; y < u.h; ++y) {
    uint8_t* row = bgr.ptr<uint8_t>(y);
    const uint8_t* src = u.px.data() + static_cast<size_t>(y) * u.w * 3;
    for (int x = 0; x < u.w; ++x) {
      row[x * 3 + 0] = src[x * 3 + 2];
      row[x * 3 + 1] = src[x * 3 + 1];
      row[x * 3 + 2] = src[x * 3 + 0];
    }
  }
  if (!cv::imwrite(path.string(), bgr)) {
    throw RuntimeFailure("cannot write image: " + path.string());
  }
}

void save_mask_png(const std::filesystem::path& path, const MaskU8& mask) {
  cv::Mat gray(mask.h, mask.w, CV_8UC1);
  for (int y = 0; y < mask.h; ++y) {
    uint8_t* row = gray.ptr<uint8_t>(y);
    const uint8_t* src = mask.m.data() + static_cast<size_t>(y) * mask.w;
    for (int x = 0; x < mask.w; ++x) row[x] = src[x] ? 255 : 0;
  }
  std::vector<int> params{cv::IMWRITE_PNG_BILEVEL, 1};
  if (!cv::imwrite(path.string(), gray, params)) {
    throw RuntimeFailure("cannot write mask: " + path.string());
  }
}

MaskU8 load_mask(const std::filesystem::path& path) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) {
    throw RuntimeFailure("cannot decode mask: " + path.string());
  }
  MaskU8 out(gray.rows, gray.cols);
  for (int y = 0; y < out.h; ++y) {
    const uint8_t* row = gray.ptr<uint8_t>(y);
    for (int x = 0; x < out.w; ++x) out.m[static_cast<size_t>(y) * out.w + x] = row[x] > 127 ? 255 : 0;
  }
  return out;
}

std::vector<float> resize_plane_bilinear(const std::vector<float>& src, int sh,
                                         int sw, int oh, int ow) {
  std::vector<float> dst(static_cast<size_t>(oh) * ow);
  if (sh == oh && sw == ow) {
    dst = src;
    return dst;
  }
  const double sy = static_cast<double>(sh) / oh;
  const double sx = static_cast<double>(sw) / ow;
  for (int y = 0; y < oh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, sh - 1);
    int y1c = std::clamp(y0 + 1, 0, sh - 1);
    for (int x = 0; x < ow; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, sw - 1);
      int x1c = std::clamp(x0 + 1, 0, sw - 1);
      double a = src[static_cast<size_t>(y0c) * sw + x0c];
      double b = src[static_cast<size_t>(y0c) * sw + x1c];
      double c = src[static_cast<size_t>(y1c) * sw + x0c];
      double d = src[static_cast<size_t>(y1c) * sw + x1c];
      double top = a + (b - a) * wx;
      double bot = c + (d - c) * wx;
      dst[static_cast<size_t>(y) * ow + x] = static_cast<float>(top + (bot - top) * wy);
    }
  }
  return dst;
}

ImageF resize_bilinear(const ImageF& src, int oh, int ow) {
  if (src.h == oh && src.w == ow) return src;
  ImageF dst(oh, ow);
  const double sy = static_cast<double>(src.h) / oh;
  const double sx = static_cast<double>(src.w) / ow;
  for (int y = 0; y < oh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, src.h - 1);
    int y1c = std::clamp(y0 + 1, 0, src.h - 1);
    for (int x = 0; x < ow; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, src.w - 1);
      int x1c = std::clamp(x0 + 1, 0, src.w - 1);
      const float* a = src.at(y0c, x0c);
      const float* b = src.at(y0c, x1c);
      const float* c = src.at(y1c, x0c);
      const float* d = src.at(y1c, x1c);
      float* o = dst.at(y, x);
      for (int ch = 0; ch < 3; ++ch) {
        double top = a[ch] + (b[ch] - a[ch]) * wx;
        double bot = c[ch] + (d[ch] - c[ch]) * wx;
        o[ch] = static_cast<float>(top + (bot - top) * wy);
      }
    }
  }
  return dst;
}

Chw to_chw(const ImageF& img) {
  Chw t(3, img.h, img.w);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const float* p = img.at(y, x);
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = p[c];
    }
  }
  return t;
}

ImageF to_image(const Chw& t) {
  ImageF img(t.h, t.w);
  for (int y = 0; y < t.h; ++y) {
    for (int x = 0; x < t.w; ++x) {
      float* p = img.at(y, x);
      for (int c = 0; c < 3; ++c) p[c] = t.at(c, y, x);
    }
  }
  return img;
}

}  // namespace sentinel
