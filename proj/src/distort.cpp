#include "biqa/distort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>

#include "biqa/csv.hpp"
#include "biqa/error.hpp"

namespace biqa {

int DistortionSpec::class_index() const {
  if (type_id < 1 || type_id > kDistortionTypes || level < 1 || level > kDistortionLevels)
    fail(ErrorCode::out_of_range,
         "distortion (" + std::to_string(type_id) + ", " + std::to_string(level) + ") out of range");
  return (type_id - 1) * kDistortionLevels + (level - 1);
}

DistortionSpec DistortionSpec::from_class_index(int index) {
  if (index < 0 || index >= kDistortionClasses)
    fail(ErrorCode::out_of_range, "class index " + std::to_string(index) + " out of range");
  return {index / kDistortionLevels + 1, index % kDistortionLevels + 1};
}

std::string label(DistortionSpec spec) {
  spec.class_index();  // range check
  return std::to_string(spec.type_id) + "_" + std::to_string(spec.level);
}

DistortionSpec parse_label(std::string_view text) {
  const auto sep = text.find('_');
  if (sep == std::string_view::npos) fail(ErrorCode::invalid_argument, "malformed label '" + std::string(text) + "'");
  DistortionSpec spec;
  const auto a = std::from_chars(text.data(), text.data() + sep, spec.type_id);
  const auto b = std::from_chars(text.data() + sep + 1, text.data() + text.size(), spec.level);
  if (a.ec != std::errc() || a.ptr != text.data() + sep || b.ec != std::errc() || b.ptr != text.data() + text.size())
    fail(ErrorCode::invalid_argument, "malformed label '" + std::string(text) + "'");
  spec.class_index();
  return spec;
}

// Severity tables. Level 5 is severe but the content stays recognizable.
const std::vector<DistortionFamily>& catalogue() {
  using G = DistortionGroup;
  static const std::vector<DistortionFamily> families = {
      {1, "gaussian_blur", G::blur, "sigma (px)", {0.5, 1.0, 1.5, 2.5, 4.0}},
      {2, "lens_blur", G::blur, "disk radius (px)", {1, 2, 3, 4, 6}},
      {3, "motion_blur", G::blur, "horizontal kernel length (px)", {3, 5, 7, 11, 15}},
      {4, "color_diffusion", G::color, "chroma blur sigma (px)", {1, 2, 4, 6, 8}},
      {5, "hue_shift", G::color, "chroma rotation (deg)", {10, 20, 35, 50, 70}},
      {6, "color_quantization", G::color, "levels per channel", {32, 16, 8, 5, 3}},
      {7, "saturation_up", G::color, "chroma gain", {1.3, 1.6, 2.0, 2.5, 3.0}},
      {8, "saturation_down", G::color, "chroma gain", {0.8, 0.6, 0.4, 0.2, 0.0}},
      {9, "block_dct", G::compression, "JPEG quant-table scale", {0.5, 1.0, 2.0, 4.0, 8.0}},
      {10, "wavelet_zeroing", G::compression, "Haar detail threshold", {0.02, 0.05, 0.1, 0.2, 0.35}},
      {11, "white_noise", G::noise, "sigma", {0.02, 0.04, 0.07, 0.1, 0.15}},
      {12, "color_noise", G::noise, "chroma sigma", {0.02, 0.04, 0.07, 0.1, 0.15}},
      {13, "impulse_noise", G::noise, "corrupted pixel fraction", {0.01, 0.03, 0.06, 0.1, 0.15}},
      {14, "speckle_noise", G::noise, "multiplicative sigma", {0.05, 0.1, 0.2, 0.3, 0.45}},
      {15, "denoised_residual", G::noise, "noise sigma before denoise blur", {0.03, 0.06, 0.09, 0.13, 0.18}},
      {16, "brighten", G::luminance, "exponent on 1 - x", {1.2, 1.5, 2.0, 2.5, 3.0}},
      {17, "darken", G::luminance, "exponent on x", {1.2, 1.5, 2.0, 2.5, 3.0}},
      {18, "mean_shift", G::luminance, "additive offset", {0.03, 0.06, 0.1, 0.15, 0.2}},
      {19, "contrast_stretch", G::luminance, "gain about 0.5", {1.2, 1.4, 1.7, 2.0, 2.5}},
      {20, "contrast_compress", G::luminance, "gain about 0.5", {0.85, 0.7, 0.55, 0.4, 0.25}},
      {21, "pixel_jitter", G::spatial, "displaced pixel fraction", {0.05, 0.1, 0.2, 0.35, 0.5}},
      {22, "pixelate", G::spatial, "block size (px)", {2, 3, 4, 6, 8}},
      {23, "ordered_dither", G::spatial, "levels per channel", {16, 8, 6, 4, 2}},
      {24, "patch_erasure", G::spatial, "erased 4x4+ patches", {1, 2, 4, 7, 12}},
      {25, "oversharpen", G::spatial, "unsharp-mask amount", {0.5, 1.0, 2.0, 3.0, 5.0}},
  };
  return families;
}

namespace {

using Plane = std::vector<float>;

int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

// Separable 1-D filter with edge replication; horizontal if axis == 0.
Plane filter1d(const Plane& src, int w, int h, const std::vector<float>& k, int axis) {
  const int r = static_cast<int>(k.size() / 2);
  Plane out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0F;
      for (int i = -r; i <= r; ++i) {
        const int xx = axis == 0 ? clampi(x + i, 0, w - 1) : x;
        const int yy = axis == 1 ? clampi(y + i, 0, h - 1) : y;
        acc += k[static_cast<std::size_t>(i + r)] * src[static_cast<std::size_t>(yy) * w + xx];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  return out;
}

std::vector<float> gaussian_kernel(double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += std::exp(-0.5 * i * i / (sigma * sigma));
  for (int i = -r; i <= r; ++i)
    k[static_cast<std::size_t>(i + r)] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)) / sum);
  return k;
}

Plane gaussian_blur_plane(const Plane& p, int w, int h, double sigma) {
  const auto k = gaussian_kernel(sigma);
  return filter1d(filter1d(p, w, h, k, 0), w, h, k, 1);
}

Raster map_planes(const Raster& r, auto&& fn) {
  Raster out = r;
  for (int c = 0; c < r.channels(); ++c) {
    Plane p(r.plane(c).begin(), r.plane(c).end());
    Plane q = fn(p, c);
    std::copy(q.begin(), q.end(), out.plane(c).begin());
  }
  return out;
}

Raster map_pixels(const Raster& r, auto&& fn) {
  Raster out = r;
  for (auto& v : out.data()) v = static_cast<float>(fn(static_cast<double>(v)));
  return out;
}

Raster to_rgb(const Raster& r) {
  if (r.channels() == 3) return r;
  Raster out(r.width(), r.height(), 3);
  for (int c = 0; c < 3; ++c) std::copy(r.plane(0).begin(), r.plane(0).end(), out.plane(c).begin());
  return out;
}

// Full-range BT.601 YCbCr with chroma centred on 0.
struct Ycc {
  Plane y, cb, cr;
};

Ycc to_ycc(const Raster& rgb) {
  const std::size_t n = static_cast<std::size_t>(rgb.width()) * rgb.height();
  Ycc out{Plane(n), Plane(n), Plane(n)};
  const auto R = rgb.plane(0), G = rgb.plane(1), B = rgb.plane(2);
  for (std::size_t i = 0; i < n; ++i) {
    out.y[i] = 0.299F * R[i] + 0.587F * G[i] + 0.114F * B[i];
    out.cb[i] = -0.168736F * R[i] - 0.331264F * G[i] + 0.5F * B[i];
    out.cr[i] = 0.5F * R[i] - 0.418688F * G[i] - 0.081312F * B[i];
  }
  return out;
}

Raster from_ycc(const Ycc& ycc, int w, int h) {
  Raster out(w, h, 3);
  auto R = out.plane(0), G = out.plane(1), B = out.plane(2);
  for (std::size_t i = 0; i < ycc.y.size(); ++i) {
    R[i] = ycc.y[i] + 1.402F * ycc.cr[i];
    G[i] = ycc.y[i] - 0.344136F * ycc.cb[i] - 0.714136F * ycc.cr[i];
    B[i] = ycc.y[i] + 1.772F * ycc.cb[i];
  }
  out.clamp();
  return out;
}

Raster chroma_transform(const Raster& r, auto&& fn) {
  const Raster rgb = to_rgb(r);
  Ycc ycc = to_ycc(rgb);
  fn(ycc);
  return from_ycc(ycc, rgb.width(), rgb.height());
}

Raster lens_blur(const Raster& r, double radius) {
  const int rad = static_cast<int>(std::ceil(radius));
  std::vector<std::pair<int, int>> taps;
  for (int dy = -rad; dy <= rad; ++dy)
    for (int dx = -rad; dx <= rad; ++dx)
      if (dx * dx + dy * dy <= radius * radius + 1e-9) taps.emplace_back(dx, dy);
  const float weight = 1.0F / static_cast<float>(taps.size());
  const int w = r.width(), h = r.height();
  return map_planes(r, [&](const Plane& p, int) {
    Plane out(p.size());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0.0F;
        for (auto [dx, dy] : taps)
          acc += p[static_cast<std::size_t>(clampi(y + dy, 0, h - 1)) * w + clampi(x + dx, 0, w - 1)];
        out[static_cast<std::size_t>(y) * w + x] = acc * weight;
      }
    return out;
  });
}

// Standard JPEG (quality 50) quantization tables, in 0..255 units.
constexpr int kLumaQuant[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                                14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                                18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                                49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
constexpr int kChromaQuant[64] = {17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
                                  24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
                                  99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
                                  99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> b{};
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x) {
        const double cu = u == 0 ? std::sqrt(0.125) : 0.5;
        b[static_cast<std::size_t>(u * 8 + x)] = cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
      }
    return b;
  }();
  return basis;
}

// Quantizes the 8x8 DCT of each block (edge-replicated at the border).
Plane block_dct_quantize(const Plane& p, int w, int h, const int* table, double scale) {
  const auto& B = dct_basis();
  Plane out = p;
  for (int by = 0; by < h; by += 8)
    for (int bx = 0; bx < w; bx += 8) {
      double block[64], coef[64], tmp[64];
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          block[y * 8 + x] =
              255.0 * p[static_cast<std::size_t>(clampi(by + y, 0, h - 1)) * w + clampi(bx + x, 0, w - 1)] - 128.0;
      for (int u = 0; u < 8; ++u)
        for (int x = 0; x < 8; ++x) {
          double acc = 0.0;
          for (int y = 0; y < 8; ++y) acc += B[static_cast<std::size_t>(u * 8 + y)] * block[y * 8 + x];
          tmp[u * 8 + x] = acc;
        }
      for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
          double acc = 0.0;
          for (int x = 0; x < 8; ++x) acc += tmp[u * 8 + x] * B[static_cast<std::size_t>(v * 8 + x)];
          const double q = std::max(1.0, table[u * 8 + v] * scale);
          coef[u * 8 + v] = std::round(acc / q) * q;
        }
      for (int y = 0; y < 8; ++y)
        for (int v = 0; v < 8; ++v) {
          double acc = 0.0;
          for (int u = 0; u < 8; ++u) acc += B[static_cast<std::size_t>(u * 8 + y)] * coef[u * 8 + v];
          tmp[y * 8 + v] = acc;
        }
      for (int y = 0; y < 8 && by + y < h; ++y)
        for (int x = 0; x < 8 && bx + x < w; ++x) {
          double acc = 0.0;
          for (int v = 0; v < 8; ++v) acc += tmp[y * 8 + v] * B[static_cast<std::size_t>(v * 8 + x)];
          out[static_cast<std::size_t>(by + y) * w + bx + x] = static_cast<float>((acc + 128.0) / 255.0);
        }
    }
  return out;
}

// Orthonormal multi-level Haar transform with hard thresholding of detail bands.
Plane haar_threshold(const Plane& p, int w, int h, double threshold, int levels) {
  const int block = 1 << levels;
  const int pw = (w + block - 1) / block * block;
  const int ph = (h + block - 1) / block * block;
  std::vector<double> a(static_cast<std::size_t>(pw) * ph);
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x)
      a[static_cast<std::size_t>(y) * pw + x] = p[static_cast<std::size_t>(std::min(y, h - 1)) * w + std::min(x, w - 1)];
  const double s = std::numbers::sqrt2 / 2.0;
  std::vector<double> tmp(a.size());
  int cw = pw, ch = ph;
  for (int l = 0; l < levels; ++l, cw /= 2, ch /= 2) {
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw / 2; ++x) {
        const double u = a[static_cast<std::size_t>(y) * pw + 2 * x];
        const double v = a[static_cast<std::size_t>(y) * pw + 2 * x + 1];
        tmp[static_cast<std::size_t>(y) * pw + x] = s * (u + v);
        tmp[static_cast<std::size_t>(y) * pw + cw / 2 + x] = s * (u - v);
      }
    for (int x = 0; x < cw; ++x)
      for (int y = 0; y < ch / 2; ++y) {
        const double u = tmp[static_cast<std::size_t>(2 * y) * pw + x];
        const double v = tmp[static_cast<std::size_t>(2 * y + 1) * pw + x];
        a[static_cast<std::size_t>(y) * pw + x] = s * (u + v);
        a[static_cast<std::size_t>(ch / 2 + y) * pw + x] = s * (u - v);
      }
  }
  const int aw = pw >> levels, ah = ph >> levels;
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x) {
      if (x < aw && y < ah) continue;
      auto& c = a[static_cast<std::size_t>(y) * pw + x];
      if (std::abs(c) < threshold) c = 0.0;
    }
  for (int l = levels - 1; l >= 0; --l) {
    cw = pw >> l;
    ch = ph >> l;
    for (int x = 0; x < cw; ++x)
      for (int y = 0; y < ch / 2; ++y) {
        const double lo = a[static_cast<std::size_t>(y) * pw + x];
        const double hi = a[static_cast<std::size_t>(ch / 2 + y) * pw + x];
        tmp[static_cast<std::size_t>(2 * y) * pw + x] = s * (lo + hi);
        tmp[static_cast<std::size_t>(2 * y + 1) * pw + x] = s * (lo - hi);
      }
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw / 2; ++x) {
        const double lo = tmp[static_cast<std::size_t>(y) * pw + x];
        const double hi = tmp[static_cast<std::size_t>(y) * pw + cw / 2 + x];
        a[static_cast<std::size_t>(y) * pw + 2 * x] = s * (lo + hi);
        a[static_cast<std::size_t>(y) * pw + 2 * x + 1] = s * (lo - hi);
      }
  }
  Plane out(p.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out[static_cast<std::size_t>(y) * w + x] = static_cast<float>(a[static_cast<std::size_t>(y) * pw + x]);
  return out;
}

constexpr int kBayer4[16] = {0, 8, 2, 10, 12, 4, 14, 6, 3, 11, 1, 9, 15, 7, 13, 5};

Raster apply_family(const Raster& r, int type_id, double param, RngStream& rng) {
  const int w = r.width(), h = r.height();
  const std::size_t n = static_cast<std::size_t>(w) * h;
  switch (type_id) {
    case 1:
      return map_planes(r, [&](const Plane& p, int) { return gaussian_blur_plane(p, w, h, param); });
    case 2:
      return lens_blur(r, param);
    case 3: {
      std::vector<float> k(static_cast<std::size_t>(param), 1.0F / static_cast<float>(param));
      return map_planes(r, [&](const Plane& p, int) { return filter1d(p, w, h, k, 0); });
    }
    case 4:
      return chroma_transform(r, [&](Ycc& c) {
        c.cb = gaussian_blur_plane(c.cb, w, h, param);
        c.cr = gaussian_blur_plane(c.cr, w, h, param);
      });
    case 5: {
      const double a = param * std::numbers::pi / 180.0;
      const auto ca = static_cast<float>(std::cos(a)), sa = static_cast<float>(std::sin(a));
      return chroma_transform(r, [&](Ycc& c) {
        for (std::size_t i = 0; i < n; ++i) {
          const float cb = c.cb[i], cr = c.cr[i];
          c.cb[i] = ca * cb - sa * cr;
          c.cr[i] = sa * cb + ca * cr;
        }
      });
    }
    case 6:
      return map_pixels(r, [&](double v) { return std::round(v * (param - 1.0)) / (param - 1.0); });
    case 7:
    case 8:
      return chroma_transform(r, [&](Ycc& c) {
        for (std::size_t i = 0; i < n; ++i) {
          c.cb[i] *= static_cast<float>(param);
          c.cr[i] *= static_cast<float>(param);
        }
      });
    case 9:
      return chroma_transform(r, [&](Ycc& c) {
        for (auto& v : c.cb) v += 0.5F;
        for (auto& v : c.cr) v += 0.5F;
        c.y = block_dct_quantize(c.y, w, h, kLumaQuant, param);
        c.cb = block_dct_quantize(c.cb, w, h, kChromaQuant, param);
        c.cr = block_dct_quantize(c.cr, w, h, kChromaQuant, param);
        for (auto& v : c.cb) v -= 0.5F;
        for (auto& v : c.cr) v -= 0.5F;
      });
    case 10:
      return map_planes(r, [&](const Plane& p, int) { return haar_threshold(p, w, h, param, 3); });
    case 11: {
      Raster out = r;
      for (auto& v : out.data()) v += static_cast<float>(param * rng.normal());
      return out;
    }
    case 12:
      return chroma_transform(r, [&](Ycc& c) {
        for (std::size_t i = 0; i < n; ++i) {
          c.cb[i] += static_cast<float>(param * rng.normal());
          c.cr[i] += static_cast<float>(param * rng.normal());
        }
      });
    case 13: {
      Raster out = r;
      for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform();
        const float value = rng.bernoulli(0.5) ? 1.0F : 0.0F;
        if (u < param)
          for (int c = 0; c < r.channels(); ++c) out.plane(c)[i] = value;
      }
      return out;
    }
    case 14: {
      Raster out = r;
      for (auto& v : out.data()) v *= static_cast<float>(1.0 + param * rng.normal());
      return out;
    }
    case 15: {
      Raster noisy = r;
      for (auto& v : noisy.data()) v += static_cast<float>(param * rng.normal());
      noisy.clamp();
      return map_planes(noisy, [&](const Plane& p, int) { return gaussian_blur_plane(p, w, h, 1.0); });
    }
    case 16:
      return map_pixels(r, [&](double v) { return 1.0 - std::pow(1.0 - v, param); });
    case 17:
      return map_pixels(r, [&](double v) { return std::pow(v, param); });
    case 18:
      return map_pixels(r, [&](double v) { return v + param; });
    case 19:
    case 20:
      return map_pixels(r, [&](double v) { return (v - 0.5) * param + 0.5; });
    case 21: {
      Raster out = r;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          // fixed draw count per pixel keeps severities coupled
          const double u = rng.uniform();
          const int dx = static_cast<int>(rng.uniform_int(5)) - 2;
          const int dy = static_cast<int>(rng.uniform_int(5)) - 2;
          if (u >= param) continue;
          for (int c = 0; c < r.channels(); ++c)
            out.at(c, y, x) = r.at(c, clampi(y + dy, 0, h - 1), clampi(x + dx, 0, w - 1));
        }
      return out;
    }
    case 22: {
      const int b = static_cast<int>(param);
      Raster out = r;
      for (int c = 0; c < r.channels(); ++c)
        for (int by = 0; by < h; by += b)
          for (int bx = 0; bx < w; bx += b) {
            double sum = 0.0;
            int count = 0;
            for (int y = by; y < std::min(by + b, h); ++y)
              for (int x = bx; x < std::min(bx + b, w); ++x, ++count) sum += r.at(c, y, x);
            const auto mean = static_cast<float>(sum / count);
            for (int y = by; y < std::min(by + b, h); ++y)
              for (int x = bx; x < std::min(bx + b, w); ++x) out.at(c, y, x) = mean;
          }
      return out;
    }
    case 23: {
      Raster out = r;
      const double steps = param - 1.0;
      for (int c = 0; c < r.channels(); ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const double t = (kBayer4[(y % 4) * 4 + (x % 4)] + 0.5) / 16.0;
            const double v = r.at(c, y, x) * steps;
            out.at(c, y, x) = static_cast<float>((std::floor(v) + (v - std::floor(v) > t ? 1.0 : 0.0)) / steps);
          }
      return out;
    }
    case 24: {
      const int size = std::max(4, std::min(w, h) / 8);
      const int max_patches = static_cast<int>(catalogue()[23].levels.back());
      const int count = static_cast<int>(param);
      Raster out = r;
      for (int i = 0; i < max_patches; ++i) {
        const int x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - size + 1)));
        const int y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h - size + 1)));
        if (i >= count) continue;
        for (int c = 0; c < r.channels(); ++c)
          for (int y = y0; y < y0 + size; ++y)
            for (int x = x0; x < x0 + size; ++x) out.at(c, y, x) = 0.5F;
      }
      return out;
    }
    case 25: {
      const Raster blurred =
          map_planes(r, [&](const Plane& p, int) { return gaussian_blur_plane(p, w, h, 1.0); });
      Raster out = r;
      for (std::size_t i = 0; i < r.size(); ++i)
        out.data()[i] = r.data()[i] + static_cast<float>(param) * (r.data()[i] - blurred.data()[i]);
      return out;
    }
    default:
      fail(ErrorCode::out_of_range, "unknown distortion type " + std::to_string(type_id));
  }
}

}  // namespace

Raster apply(const Raster& r, DistortionSpec spec, RngStream rng) {
  const int index = spec.class_index();
  (void)index;
  if (r.width() < 16 || r.height() < 16)
    fail(ErrorCode::out_of_range, "image too small for distortion kernels (need at least 16x16)");
  const auto& family = catalogue()[static_cast<std::size_t>(spec.type_id - 1)];
  Raster out = apply_family(r, spec.type_id, family.levels[static_cast<std::size_t>(spec.level - 1)], rng);
  out.clamp();
  return out;
}

Raster reference_image() {
  constexpr int size = 64;
  Raster r(size, size, 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = x / (size - 1.0), v = y / (size - 1.0);
      const double grating = 0.03 * std::sin(2.0 * std::numbers::pi * (x * 0.19 + y * 0.07));
      const double fine = 0.015 * std::sin(2.0 * std::numbers::pi * (x * 0.41 - y * 0.33));
      const double texture = 0.3 * (static_cast<double>(splitmix64(static_cast<std::uint64_t>(y * size + x)) >> 11) *
                                         0x1.0p-53 -
                                     0.5);
      const double disk = std::hypot(x - 40.0, y - 22.0) < 11.0 ? 0.25 : 0.0;
      const double bar = (x > 8 && x < 26 && y > 36 && y < 56) ? -0.2 : 0.0;
      const double base = 0.25 + 0.35 * u + 0.15 * v + grating + fine + texture;
      r.at(0, y, x) = static_cast<float>(base + disk);
      r.at(1, y, x) = static_cast<float>(base * 0.9 + 0.05 + bar + 0.1 * v);
      r.at(2, y, x) = static_cast<float>(0.65 - 0.3 * u + grating * 0.5 + texture + bar * 0.5);
    }
  r.clamp();
  return r;
}

double per_pixel_rmse(const Raster& a, const Raster& b) {
  if (a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels())
    fail(ErrorCode::shape_mismatch, "rasters differ in shape");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(a.size()));
}

int CorpusManifest::class_count() const {
  std::vector<bool> seen(kDistortionClasses, false);
  int count = 0;
  for (const auto& e : entries) {
    const auto idx = static_cast<std::size_t>(e.spec.class_index());
    if (!seen[idx]) {
      seen[idx] = true;
      ++count;
    }
  }
  return count;
}

std::vector<DistortionSpec> full_sweep() {
  std::vector<DistortionSpec> specs;
  specs.reserve(kDistortionClasses);
  for (int i = 0; i < kDistortionClasses; ++i) specs.push_back(DistortionSpec::from_class_index(i));
  return specs;
}

std::uint64_t corpus_seed(std::uint64_t base_seed, std::size_t source_index, int class_index) {
  return mix_seed(mix_seed(base_seed, source_index), static_cast<std::uint64_t>(class_index));
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) fail(ErrorCode::missing_file, "no such directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

CorpusManifest generate_corpus(const std::filesystem::path& source_dir, const std::filesystem::path& out_dir,
                               const std::vector<DistortionSpec>& specs, std::uint64_t base_seed) {
  const auto sources = list_images(source_dir);
  if (sources.empty()) fail(ErrorCode::missing_file, "no source images in " + source_dir.string());
  for (const auto& spec : specs) spec.class_index();
  std::filesystem::create_directories(out_dir);

  CorpusManifest manifest;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    Raster source;
    try {
      source = load_image(sources[i]);
    } catch (const Error& e) {
      for (const auto& spec : specs) manifest.failures.push_back({sources[i], spec, e.what()});
      continue;
    }
    for (const auto& spec : specs) {
      const auto seed = corpus_seed(base_seed, i, spec.class_index());
      const auto name = sources[i].stem().string() + "_" + label(spec) + ".png";
      try {
        save_image(apply(source, spec, RngStream(seed, 0)), out_dir / name);
        manifest.entries.push_back({sources[i], name, spec, seed});
      } catch (const Error& e) {
        manifest.failures.push_back({sources[i], spec, e.what()});
      }
    }
  }
  write_corpus_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

void write_corpus_manifest(const CorpusManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << "source,distorted,type_id,level,label,seed\n";
  for (const auto& e : manifest.entries)
    out << csv::format_row({e.source.string(), e.distorted.string(), std::to_string(e.spec.type_id),
                            std::to_string(e.spec.level), label(e.spec), std::to_string(e.seed)})
        << '\n';
  if (!out) fail(ErrorCode::io, "write failed: " + path.string());
}

CorpusManifest read_corpus_manifest(const std::filesystem::path& path) {
  const auto table = csv::read_file(path);
  const int source = table.require("source"), distorted = table.require("distorted"),
            type_id = table.require("type_id"), level = table.require("level"), lbl = table.require("label"),
            seed = table.require("seed");
  CorpusManifest manifest;
  const auto base = path.parent_path();
  for (const auto& row : table.rows) {
    CorpusEntry e;
    e.source = row[static_cast<std::size_t>(source)];
    e.distorted = row[static_cast<std::size_t>(distorted)];
    if (e.distorted.is_relative()) e.distorted = base / e.distorted;
    e.spec = {static_cast<int>(csv::parse_int(row[static_cast<std::size_t>(type_id)])),
              static_cast<int>(csv::parse_int(row[static_cast<std::size_t>(level)]))};
    if (label(e.spec) != row[static_cast<std::size_t>(lbl)])
      fail(ErrorCode::corrupt_data, "label column disagrees with type_id/level in " + path.string());
    e.seed = static_cast<std::uint64_t>(std::stoull(row[static_cast<std::size_t>(seed)]));
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

}  // namespace biqa
