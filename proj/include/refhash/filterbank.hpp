#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "refhash/common.hpp"
#include "refhash/disk_synth.hpp"

namespace refhash {

inline constexpr int kNumFilters = 24;
inline constexpr int kNumOrientations = 8;

enum class FilterKind { gaussian, log, oriented };

struct FilterKernel {
  FilterKind kind = FilterKind::gaussian;
  double scale = 1.0;
  double orientation_deg = 0.0;
  int half = 0;                 // side length is 2 * half + 1
  std::vector<double> weights;  // row-major, (dy + half) * side + (dx + half)

  int side() const { return 2 * half + 1; }
  double at(int dx, int dy) const {
    return weights[static_cast<std::size_t>((dy + half) * side() + (dx + half))];
  }
  std::string describe() const {
    std::string k = kind == FilterKind::gaussian ? "gaussian"
                    : kind == FilterKind::log    ? "log"
                                                 : "oriented";
    std::string s = k + "(scale=" + std::to_string(scale);
    if (kind == FilterKind::oriented) s += ", " + std::to_string(orientation_deg) + " deg";
    return s + ", " + std::to_string(side()) + "x" + std::to_string(side()) + ")";
  }
};

// Support is 6 * scale rounded up to the next odd integer.
inline int kernel_half_width(double scale) {
  int side = static_cast<int>(std::ceil(6.0 * scale - 1e-9));
  if (side % 2 == 0) ++side;
  return side / 2;
}

namespace detail {

template <typename Fn>
FilterKernel sample_kernel(FilterKind kind, double scale, double orientation_deg, Fn&& fn) {
  FilterKernel k;
  k.kind = kind;
  k.scale = scale;
  k.orientation_deg = orientation_deg;
  k.half = kernel_half_width(scale);
  k.weights.reserve(static_cast<std::size_t>(k.side() * k.side()));
  for (int dy = -k.half; dy <= k.half; ++dy)
    for (int dx = -k.half; dx <= k.half; ++dx) k.weights.push_back(fn(dx, dy));
  return k;
}

// Removes the DC component and rescales to unit L1 norm.
inline void zero_mean_l1(std::vector<double>& w) {
  double mean = 0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  double l1 = 0;
  for (double& v : w) {
    v -= mean;
    l1 += std::abs(v);
  }
  for (double& v : w) v /= l1;
}

}  // namespace detail

inline FilterKernel gaussian_kernel(double s) {
  auto k = detail::sample_kernel(FilterKind::gaussian, s, 0.0, [s](int dx, int dy) {
    return std::exp(-(dx * dx + dy * dy) / (2.0 * s * s));
  });
  double sum = 0;
  for (double v : k.weights) sum += v;
  for (double& v : k.weights) v /= sum;
  return k;
}

inline FilterKernel log_kernel(double s) {
  auto k = detail::sample_kernel(FilterKind::log, s, 0.0, [s](int dx, int dy) {
    const double r2 = dx * dx + dy * dy;
    return (r2 - 2.0 * s * s) / (s * s * s * s) * std::exp(-r2 / (2.0 * s * s));
  });
  detail::zero_mean_l1(k.weights);
  return k;
}

// First derivative of a Gaussian along direction theta (x right, y down).
inline FilterKernel oriented_kernel(double s, double orientation_deg) {
  const double t = orientation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(t), sn = std::sin(t);
  auto k = detail::sample_kernel(FilterKind::oriented, s, orientation_deg, [=](int dx, int dy) {
    return -(dx * c + dy * sn) / (s * s) * std::exp(-(dx * dx + dy * dy) / (2.0 * s * s));
  });
  detail::zero_mean_l1(k.weights);
  return k;
}

// 4 Gaussians, 4 Laplacians of Gaussian (one per scale) and 16 oriented first
// derivatives (8 orientations over [0, 180) at the second and fourth scale).
struct FilterBank {
  std::array<double, 4> scales{};
  std::vector<FilterKernel> kernels;

  int max_half() const {
    int h = 0;
    for (const auto& k : kernels) h = std::max(h, k.half);
    return h;
  }
  const FilterKernel& largest() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < kernels.size(); ++i)
      if (kernels[i].half > kernels[best].half) best = i;
    return kernels[best];
  }
};

inline constexpr std::array<double, 4> kDefaultScales{1.0, std::numbers::sqrt2, 2.0,
                                                      2.0 * std::numbers::sqrt2};

inline FilterBank build_filter_bank(const std::array<double, 4>& scales = kDefaultScales) {
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] > 0)) throw std::invalid_argument("filter scales must be positive");
    if (i > 0 && !(scales[i] > scales[i - 1]))
      throw std::invalid_argument("filter scales must be strictly increasing");
  }
  FilterBank bank;
  bank.scales = scales;
  for (double s : scales) bank.kernels.push_back(gaussian_kernel(s));
  for (double s : scales) bank.kernels.push_back(log_kernel(s));
  for (double s : {scales[1], scales[3]})
    for (int o = 0; o < kNumOrientations; ++o)
      bank.kernels.push_back(oriented_kernel(s, 180.0 * o / kNumOrientations));
  return bank;
}

struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;  // inclusive
  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline BoundingBox mask_bounds(const Mask& mask) {
  BoundingBox b{mask.width(), mask.height(), -1, -1};
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask(x, y)) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x);
        b.y1 = std::max(b.y1, y);
      }
  if (b.x1 < 0) return {};
  return b;
}

// Per-pixel 24-vectors at the valid pixels of a disk, stored compactly in
// row-major pixel order.
struct ResponseStack {
  int width = 0, height = 0;
  Mask valid;
  BoundingBox disk_bounds;       // bounding box of the disk mask
  std::vector<int> pixels;       // linear indices y * width + x of valid pixels
  std::vector<double> responses; // pixels.size() * kNumFilters

  std::size_t count() const { return pixels.size(); }
  std::span<const double> at(std::size_t i) const {
    return {responses.data() + i * kNumFilters, kNumFilters};
  }
};

struct FilterOptions {
  // Subtract the in-mask mean and divide by the in-mask standard deviation
  // before filtering. Disabled only to test linearity.
  bool standardize = true;
};

// Pixels whose (2*half+1)^2 neighbourhood lies entirely inside the mask.
inline Mask erode_mask(const Mask& mask, int half) {
  const int w = mask.width(), h = mask.height();
  Grid<int> integral(w + 1, h + 1, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      integral(x + 1, y + 1) =
          (mask(x, y) ? 1 : 0) + integral(x, y + 1) + integral(x + 1, y) - integral(x, y);
  Mask out(w, h, 0);
  const int full = (2 * half + 1) * (2 * half + 1);
  for (int y = half; y < h - half; ++y)
    for (int x = half; x < w - half; ++x) {
      if (!mask(x, y)) continue;
      const int s = integral(x + half + 1, y + half + 1) - integral(x - half, y + half + 1) -
                    integral(x + half + 1, y - half) + integral(x - half, y - half);
      out(x, y) = s == full ? 1 : 0;
    }
  return out;
}

// Correlates the disk with every kernel at pixels whose largest-kernel
// support lies inside the disk. A zero-variance disk yields all-zero responses.
inline ResponseStack apply_filter_bank(const ReflectanceDisk& disk, const FilterBank& bank,
                                       const FilterOptions& opts = {}) {
  const int w = disk.pixels.width(), h = disk.pixels.height();
  if (disk.mask.width() != w || disk.mask.height() != h)
    throw std::invalid_argument("disk pixels and mask differ in size");
  if (bank.kernels.size() != static_cast<std::size_t>(kNumFilters))
    throw std::invalid_argument("filter bank must hold 24 kernels");

  double sum = 0, sum2 = 0;
  std::size_t n = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (disk.mask(x, y)) {
        sum += disk.pixels(x, y);
        ++n;
      }
  if (n == 0) throw std::invalid_argument("disk mask is empty");
  const double mean = sum / static_cast<double>(n);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (disk.mask(x, y)) {
        const double d = disk.pixels(x, y) - mean;
        sum2 += d * d;
      }
  const double stddev = std::sqrt(sum2 / static_cast<double>(n));

  ResponseStack out;
  out.width = w;
  out.height = h;
  out.disk_bounds = mask_bounds(disk.mask);
  out.valid = erode_mask(disk.mask, bank.max_half());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (out.valid(x, y)) out.pixels.push_back(y * w + x);
  if (out.pixels.empty())
    throw std::invalid_argument("disk is smaller than the support of kernel " +
                                bank.largest().describe());
  out.responses.assign(out.pixels.size() * kNumFilters, 0.0);

  const bool degenerate = opts.standardize && stddev <= 1e-12;
  if (degenerate) return out;

  Grid<double> img(w, h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (disk.mask(x, y))
        img(x, y) = opts.standardize ? (disk.pixels(x, y) - mean) / stddev : disk.pixels(x, y);

  parallel_for(out.pixels.size(), [&](std::size_t i) {
    const int x = out.pixels[i] % w, y = out.pixels[i] / w;
    double* dst = out.responses.data() + i * kNumFilters;
    for (std::size_t f = 0; f < bank.kernels.size(); ++f) {
      const auto& k = bank.kernels[f];
      const int side = k.side();
      double acc = 0;
      for (int dy = -k.half; dy <= k.half; ++dy) {
        const double* row = &img(x - k.half, y + dy);
        const double* kw = k.weights.data() + static_cast<std::size_t>((dy + k.half) * side);
        for (int j = 0; j < side; ++j) acc += kw[j] * row[j];
      }
      dst[f] = acc;
    }
  });
  return out;
}

}  // namespace refhash
