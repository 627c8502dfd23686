#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdfusion/image.hpp"

// Fusion quality metrics on (I_a, I_b, I_f) triples with values in [0,1].

namespace tdfusion::metrics {

struct MetricsReport {
  double en = 0.0;
  double sf = 0.0;
  double scd = 0.0;
  double vif = 0.0;
  double qabf = 0.0;
  double ssim = 0.0;
};

namespace detail {

inline void require_same(const Image& x, const Image& y, const char* what) {
  if (!x.same_shape(y)) {
    throw ShapeError(std::string(what) + ": images " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                     " and " + std::to_string(y.height) + "x" + std::to_string(y.width) + " differ");
  }
}

inline std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  if (i < 0) i = -i;
  if (i >= len) i = 2 * (len - 1) - i;
  return static_cast<std::size_t>(i);
}

/// Normalized 1-D Gaussian of odd length n.
inline std::vector<double> gaussian(std::size_t n, double sigma) {
  std::vector<double> k(n);
  const double c = static_cast<double>(n / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - c;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += k[i];
  }
  for (double& v : k) v /= total;
  return k;
}

/// Separable filter with the same kernel along both axes.
/// `same` keeps the size using reflect padding; otherwise only valid positions.
inline Image filter(const Image& im, const std::vector<double>& k, bool same) {
  const std::size_t n = k.size(), r = n / 2;
  const std::size_t h = im.height, w = im.width;
  if (same ? (r >= h || r >= w) : (n > h || n > w)) {
    throw ShapeError("filter: " + std::to_string(n) + "-tap window does not fit " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  const std::size_t ho = same ? h : h - n + 1, wo = same ? w : w - n + 1;
  Image rows(h, wo);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < wo; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        const std::size_t col = same ? reflect(static_cast<std::ptrdiff_t>(j + t) - static_cast<std::ptrdiff_t>(r), w)
                                     : j + t;
        s += k[t] * im.at(i, col);
      }
      rows.at(i, j) = s;
    }
  }
  Image out(ho, wo);
  for (std::size_t i = 0; i < ho; ++i) {
    for (std::size_t j = 0; j < wo; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        const std::size_t row = same ? reflect(static_cast<std::ptrdiff_t>(i + t) - static_cast<std::ptrdiff_t>(r), h)
                                     : i + t;
        s += k[t] * rows.at(row, j);
      }
      out.at(i, j) = s;
    }
  }
  return out;
}

inline Image product(const Image& x, const Image& y) {
  Image out(x.height, x.width);
  for (std::size_t i = 0; i < x.size(); ++i) out.pixels[i] = x.pixels[i] * y.pixels[i];
  return out;
}

inline Image scaled(const Image& x, double factor) {
  Image out = x;
  for (double& v : out.pixels) v *= factor;
  return out;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// Windowed SSIM between two images, Gaussian 11x11 window, valid positions.
inline double ssim_pair(const Image& x, const Image& y) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::vector<double> k = gaussian(11, 1.5);
  const Image mx = filter(x, k, false), my = filter(y, k, false);
  const Image sxx = filter(product(x, x), k, false);
  const Image syy = filter(product(y, y), k, false);
  const Image sxy = filter(product(x, y), k, false);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double ux = mx.pixels[i], uy = my.pixels[i];
    const double vx = sxx.pixels[i] - ux * ux, vy = syy.pixels[i] - uy * uy, cxy = sxy.pixels[i] - ux * uy;
    total += ((2 * ux * uy + c1) * (2 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

struct EdgeField {
  std::vector<double> strength;
  std::vector<double> orientation;
};

inline EdgeField sobel_edges(const Image& im) {
  const std::size_t h = im.height, w = im.width;
  EdgeField e{std::vector<double>(h * w), std::vector<double>(h * w)};
  auto px = [&](std::ptrdiff_t i, std::ptrdiff_t j) { return im.at(reflect(i, h), reflect(j, w)); };
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const auto r = static_cast<std::ptrdiff_t>(i), c = static_cast<std::ptrdiff_t>(j);
      const double gx = (px(r - 1, c + 1) + 2 * px(r, c + 1) + px(r + 1, c + 1)) -
                        (px(r - 1, c - 1) + 2 * px(r, c - 1) + px(r + 1, c - 1));
      const double gy = (px(r + 1, c - 1) + 2 * px(r + 1, c) + px(r + 1, c + 1)) -
                        (px(r - 1, c - 1) + 2 * px(r - 1, c) + px(r - 1, c + 1));
      e.strength[i * w + j] = std::sqrt(gx * gx + gy * gy);
      e.orientation[i * w + j] = gx == 0.0 ? std::numbers::pi / 2 : std::atan(gy / gx);
    }
  }
  return e;
}

/// Edge preservation of a source in the fused image, per pixel.
inline std::vector<double> edge_transfer(const EdgeField& src, const EdgeField& fused) {
  constexpr double gamma_g = 0.9994, kappa_g = -15.0, sigma_g = 0.5;
  constexpr double gamma_a = 0.9879, kappa_a = -22.0, sigma_a = 0.8;
  std::vector<double> q(src.strength.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double gs = src.strength[i], gf = fused.strength[i];
    const double g = gs == gf ? 1.0 : (gs > gf ? gf / gs : gs / gf);
    const double a = 1.0 - std::abs(src.orientation[i] - fused.orientation[i]) / (std::numbers::pi / 2);
    const double qg = gamma_g / (1.0 + std::exp(kappa_g * (g - sigma_g)));
    const double qa = gamma_a / (1.0 + std::exp(kappa_a * (a - sigma_a)));
    q[i] = qg * qa;
  }
  return q;
}

/// Pixel-domain VIF of `dist` against `ref`, four scales. Inputs on a 0..255 range.
inline double vif_pair(const Image& ref_in, const Image& dist_in) {
  constexpr double sigma_nsq = 2.0, eps = 1e-10;
  Image ref = ref_in, dist = dist_in;
  double num = 0.0, den = 0.0;
  for (std::size_t scale = 1; scale <= 4; ++scale) {
    const std::size_t n = (std::size_t{1} << (4 - scale + 1)) + 1;
    const std::vector<double> k = gaussian(n, static_cast<double>(n) / 5.0);
    if (scale > 1) {
      auto down = [](const Image& im) {
        Image out((im.height + 1) / 2, (im.width + 1) / 2);
        for (std::size_t i = 0; i < out.height; ++i) {
          for (std::size_t j = 0; j < out.width; ++j) out.at(i, j) = im.at(2 * i, 2 * j);
        }
        return out;
      };
      ref = down(filter(ref, k, true));
      dist = down(filter(dist, k, true));
    }
    const Image mu1 = filter(ref, k, true), mu2 = filter(dist, k, true);
    const Image s11 = filter(product(ref, ref), k, true);
    const Image s22 = filter(product(dist, dist), k, true);
    const Image s12 = filter(product(ref, dist), k, true);
    for (std::size_t i = 0; i < mu1.size(); ++i) {
      const double m1 = mu1.pixels[i], m2 = mu2.pixels[i];
      double v1 = std::max(s11.pixels[i] - m1 * m1, 0.0);
      const double v2 = std::max(s22.pixels[i] - m2 * m2, 0.0);
      const double c12 = s12.pixels[i] - m1 * m2;
      double g = c12 / (v1 + eps);
      double sv = v2 - g * c12;
      if (v1 < eps) {
        g = 0.0;
        sv = v2;
        v1 = 0.0;
      }
      if (v2 < eps) {
        g = 0.0;
        sv = 0.0;
      }
      if (g < 0.0) {
        sv = v2;
        g = 0.0;
      }
      sv = std::max(sv, eps);
      num += std::log10(1.0 + g * g * v1 / (sv + sigma_nsq));
      den += std::log10(1.0 + v1 / sigma_nsq);
    }
  }
  return den == 0.0 ? 0.0 : num / den;
}

}  // namespace detail

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr std::size_t kVifMinSize = 24;

/// Shannon entropy in bits of the 256-bin histogram, bin = round(255 * I).
inline double entropy(const Image& im) {
  if (im.size() == 0) throw ShapeError("entropy: empty image");
  std::array<std::size_t, 256> hist{};
  for (double v : im.pixels) ++hist[static_cast<std::size_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)))];
  double h = 0.0;
  const double total = static_cast<double>(im.size());
  for (std::size_t c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log2(p);
  }
  return h;
}

/// sqrt(RF^2 + CF^2) over interior first differences.
inline double spatial_frequency(const Image& im) {
  if (im.height < 2 || im.width < 2) throw ShapeError("spatial_frequency: image smaller than 2x2");
  double rf = 0.0, cf = 0.0;
  for (std::size_t i = 0; i < im.height; ++i) {
    for (std::size_t j = 1; j < im.width; ++j) {
      const double d = im.at(i, j) - im.at(i, j - 1);
      rf += d * d;
    }
  }
  for (std::size_t i = 1; i < im.height; ++i) {
    for (std::size_t j = 0; j < im.width; ++j) {
      const double d = im.at(i, j) - im.at(i - 1, j);
      cf += d * d;
    }
  }
  rf /= static_cast<double>(im.height * (im.width - 1));
  cf /= static_cast<double>((im.height - 1) * im.width);
  return std::sqrt(rf + cf);
}

/// corr(I_f - I_b, I_a) + corr(I_f - I_a, I_b); zero variance contributes 0.
inline double scd(const Image& a, const Image& b, const Image& f) {
  detail::require_same(a, b, "scd");
  detail::require_same(a, f, "scd");
  std::vector<double> fb(f.size()), fa(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    fb[i] = f.pixels[i] - b.pixels[i];
    fa[i] = f.pixels[i] - a.pixels[i];
  }
  return detail::pearson(fb, a.pixels) + detail::pearson(fa, b.pixels);
}

inline double ssim_fusion(const Image& a, const Image& b, const Image& f) {
  detail::require_same(a, b, "ssim");
  detail::require_same(a, f, "ssim");
  if (f.height < kSsimWindow || f.width < kSsimWindow) throw ShapeError("ssim: image smaller than the 11x11 window");
  return 0.5 * (detail::ssim_pair(f, a) + detail::ssim_pair(f, b));
}

/// Edge-transfer quality, weighted by source gradient strength. 0 when no source has edges.
inline double qabf(const Image& a, const Image& b, const Image& f) {
  detail::require_same(a, b, "qabf");
  detail::require_same(a, f, "qabf");
  if (f.height < 2 || f.width < 2) throw ShapeError("qabf: image smaller than 2x2");
  const detail::EdgeField ea = detail::sobel_edges(a), eb = detail::sobel_edges(b), ef = detail::sobel_edges(f);
  const std::vector<double> qa = detail::edge_transfer(ea, ef), qb = detail::edge_transfer(eb, ef);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < qa.size(); ++i) {
    num += qa[i] * ea.strength[i] + qb[i] * eb.strength[i];
    den += ea.strength[i] + eb.strength[i];
  }
  return den == 0.0 ? 0.0 : num / den;
}

/// Mean of the two source-as-reference evaluations.
inline double vif(const Image& a, const Image& b, const Image& f) {
  detail::require_same(a, b, "vif");
  detail::require_same(a, f, "vif");
  if (f.height < kVifMinSize || f.width < kVifMinSize) {
    throw ShapeError("vif: need at least " + std::to_string(kVifMinSize) + "x" + std::to_string(kVifMinSize) +
                     " for four scales");
  }
  const Image fs = detail::scaled(f, 255.0);
  return 0.5 * (detail::vif_pair(detail::scaled(a, 255.0), fs) + detail::vif_pair(detail::scaled(b, 255.0), fs));
}

inline MetricsReport evaluate(const Image& a, const Image& b, const Image& f) {
  return {entropy(f), spatial_frequency(f), scd(a, b, f), vif(a, b, f), qabf(a, b, f), ssim_fusion(a, b, f)};
}

inline MetricsReport mean_report(const std::vector<MetricsReport>& rows) {
  MetricsReport m;
  if (rows.empty()) return m;
  for (const MetricsReport& r : rows) {
    m.en += r.en;
    m.sf += r.sf;
    m.scd += r.scd;
    m.vif += r.vif;
    m.qabf += r.qabf;
    m.ssim += r.ssim;
  }
  const double n = static_cast<double>(rows.size());
  return {m.en / n, m.sf / n, m.scd / n, m.vif / n, m.qabf / n, m.ssim / n};
}

}  // namespace tdfusion::metrics
