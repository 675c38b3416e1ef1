#pragma once

#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "refhash/common.hpp"
#include "refhash/texton.hpp"

namespace refhash {

// Axis-aligned rectangle in coordinates normalized to the disk bounding box.
struct Region {
  double x0 = 0, y0 = 0, x1 = 1, y1 = 1;
  friend bool operator==(const Region&, const Region&) = default;
};

struct PixelRect {
  int x0, y0, x1, y1;  // inclusive
};

// Scales a region onto a bounding box. The result always covers at least one
// pixel: [floor(lo * n), max(floor(lo * n), ceil(hi * n) - 1)] on each axis.
inline PixelRect to_pixels(const Region& r, const BoundingBox& box) {
  auto span = [](double lo, double hi, int origin, int n) {
    const int a = std::clamp(static_cast<int>(std::floor(lo * n)), 0, n - 1);
    const int b = std::clamp(static_cast<int>(std::ceil(hi * n)) - 1, a, n - 1);
    return std::pair{origin + a, origin + b};
  };
  auto [x0, x1] = span(r.x0, r.x1, box.x0, box.width());
  auto [y0, y1] = span(r.y0, r.y1, box.y0, box.height());
  return {x0, y0, x1, y1};
}

struct RegionSet {
  std::vector<Region> regions;
  std::uint64_t seed = 0;
  std::size_t size() const { return regions.size(); }
};

// Rectangles with side lengths uniform in [min_side, max_side] and positions
// uniform subject to containment in the unit square.
inline RegionSet sample_regions(int count, std::uint64_t seed, double min_side = 0.05,
                                double max_side = 0.9) {
  if (count < 1) throw std::invalid_argument("region count must be at least 1");
  if (!(min_side > 0) || !(max_side <= 1)) throw std::invalid_argument("region sides must lie in (0, 1]");
  if (!(min_side < max_side)) throw std::invalid_argument("min_side must be smaller than max_side");
  RegionSet set;
  set.seed = seed;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> side(min_side, max_side), unit(0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    const double w = side(rng), h = side(rng);
    const double x0 = unit(rng) * (1.0 - w), y0 = unit(rng) * (1.0 - h);
    set.regions.push_back({x0, y0, x0 + w, y0 + h});
  }
  return set;
}

// Per-texton integral images of soft texton weights over a texton map, plus
// an integral image of the valid-pixel indicator.
class LayoutIntegrals {
 public:
  explicit LayoutIntegrals(const TextonMap& map)
      : w_(map.width + 1), h_(map.height + 1), K_(map.K), bounds_(map.disk_bounds) {
    const std::size_t plane = static_cast<std::size_t>(w_) * static_cast<std::size_t>(h_);
    sums_.assign(plane * static_cast<std::size_t>(K_), 0.0);
    counts_.assign(plane, 0.0);
    // Scatter pixel weights at (x+1, y+1), then prefix-sum in place.
    for (std::size_t i = 0; i < map.pixels.size(); ++i) {
      const int x = map.pixels[i] % map.width + 1, y = map.pixels[i] / map.width + 1;
      const std::size_t cell = offset(x, y);
      counts_[cell] += 1.0;
      const auto& a = map.assignments[i];
      for (int j = 0; j < kSoftNeighbors; ++j)
        sums_[plane * static_cast<std::size_t>(a.index[j]) + cell] += a.weight[j];
    }
    auto prefix = [&](double* p) {
      for (int y = 1; y < h_; ++y)
        for (int x = 1; x < w_; ++x)
          p[offset(x, y)] += p[offset(x - 1, y)] + p[offset(x, y - 1)] - p[offset(x - 1, y - 1)];
    };
    prefix(counts_.data());
    for (int t = 0; t < K_; ++t) prefix(sums_.data() + plane * static_cast<std::size_t>(t));
  }

  int K() const { return K_; }
  const BoundingBox& bounds() const { return bounds_; }

  // Soft count of texton t over the valid pixels of a pixel rectangle.
  double sum(const PixelRect& r, int t) const {
    const std::size_t plane = static_cast<std::size_t>(w_) * static_cast<std::size_t>(h_);
    return box(sums_.data() + plane * static_cast<std::size_t>(t), r);
  }
  double valid_count(const PixelRect& r) const { return box(counts_.data(), r); }

 private:
  std::size_t offset(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(w_) + static_cast<std::size_t>(x);
  }
  double box(const double* p, const PixelRect& r) const {
    return p[offset(r.x1 + 1, r.y1 + 1)] - p[offset(r.x0, r.y1 + 1)] - p[offset(r.x1 + 1, r.y0)] +
           p[offset(r.x0, r.y0)];
  }

  int w_, h_, K_;
  BoundingBox bounds_;
  std::vector<double> sums_;
  std::vector<double> counts_;
};

// Reflectance-layout response S(r, t): soft count of texton t inside region r.
inline double rlf_response(const LayoutIntegrals& li, const Region& region, int texton) {
  if (texton < 0 || texton >= li.K()) throw std::out_of_range("texton index out of range");
  return li.sum(to_pixels(region, li.bounds()), texton);
}

// S(r, t) for every region and texton, row r holding K entries. With
// normalization each entry is divided by the region's valid-pixel count.
struct FeatureTable {
  int R = 0, K = 0;
  bool normalized = true;
  std::vector<double> values;

  double operator()(int r, int t) const {
    return values[static_cast<std::size_t>(r) * static_cast<std::size_t>(K) + static_cast<std::size_t>(t)];
  }
  std::size_t columns() const { return values.size(); }
};

inline FeatureTable build_feature_table(const LayoutIntegrals& li, const RegionSet& regions,
                                        bool normalize = true) {
  FeatureTable table;
  table.R = static_cast<int>(regions.size());
  table.K = li.K();
  table.normalized = normalize;
  table.values.resize(regions.size() * static_cast<std::size_t>(li.K()));
  for (int r = 0; r < table.R; ++r) {
    const PixelRect px = to_pixels(regions.regions[static_cast<std::size_t>(r)], li.bounds());
    const double n = li.valid_count(px);
    double* row = table.values.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(li.K());
    for (int t = 0; t < li.K(); ++t) {
      const double s = li.sum(px, t);
      row[t] = !normalize ? s : (n > 0 ? s / n : 0.0);
    }
  }
  return table;
}

inline FeatureTable build_feature_table(const TextonMap& map, const RegionSet& regions,
                                        bool normalize = true) {
  return build_feature_table(LayoutIntegrals(map), regions, normalize);
}

struct FeaturePair {
  int region = 0;
  int texton = 0;
  friend bool operator==(const FeaturePair&, const FeaturePair&) = default;
  friend auto operator<=>(const FeaturePair&, const FeaturePair&) = default;
};

// Selected S(r, t) values in the given order.
inline std::vector<double> extract_feature_vector(const FeatureTable& table,
                                                  std::span<const FeaturePair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("no selected features");
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.region < 0 || p.region >= table.R || p.texton < 0 || p.texton >= table.K)
      throw std::out_of_range("feature pair (" + std::to_string(p.region) + ", " +
                              std::to_string(p.texton) + ") outside the " + std::to_string(table.R) +
                              " x " + std::to_string(table.K) + " feature table");
    out.push_back(table(p.region, p.texton));
  }
  return out;
}

inline std::vector<double> extract_feature_vector(const LayoutIntegrals& li, const RegionSet& regions,
                                                  std::span<const FeaturePair> pairs,
                                                  bool normalize = true) {
  if (pairs.empty()) throw std::invalid_argument("no selected features");
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.region < 0 || static_cast<std::size_t>(p.region) >= regions.size() || p.texton < 0 ||
        p.texton >= li.K())
      throw std::out_of_range("feature pair (" + std::to_string(p.region) + ", " +
                              std::to_string(p.texton) + ") references an unknown region or texton");
    const PixelRect px = to_pixels(regions.regions[static_cast<std::size_t>(p.region)], li.bounds());
    const double s = li.sum(px, p.texton);
    const double n = li.valid_count(px);
    out.push_back(!normalize ? s : (n > 0 ? s / n : 0.0));
  }
  return out;
}

}  // namespace refhash
