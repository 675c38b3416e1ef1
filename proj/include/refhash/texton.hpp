#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "refhash/common.hpp"
#include "refhash/filterbank.hpp"

namespace refhash {

inline constexpr int kSoftNeighbors = 8;
inline constexpr std::size_t kDims = kNumFilters;

// K cluster centres in per-dimension whitened filter-response space.
struct TextonDictionary {
  int K = 0;
  std::vector<double> mean;     // kNumFilters
  std::vector<double> scale;    // kNumFilters, divides (x - mean)
  std::vector<double> centers;  // K * kNumFilters, whitened
  double objective = 0;         // sum of squared whitened distances at the end
  std::vector<double> objective_history;

  std::span<const double> center(int k) const {
    return {centers.data() + static_cast<std::size_t>(k) * kNumFilters, kNumFilters};
  }
  // Centre k mapped back to raw response units.
  std::array<double, kNumFilters> raw_center(int k) const {
    std::array<double, kNumFilters> out{};
    const auto c = center(k);
    for (std::size_t d = 0; d < kDims; ++d) out[d] = c[d] * scale[d] + mean[d];
    return out;
  }
  void whiten(std::span<const double> raw, double* out) const {
    for (std::size_t d = 0; d < kDims; ++d) out[d] = (raw[d] - mean[d]) / scale[d];
  }
};

namespace detail {

inline double sq_dist(const double* a, const double* b) {
  double s = 0;
  for (int d = 0; d < kNumFilters; ++d) {
    const double t = a[d] - b[d];
    s += t * t;
  }
  return s;
}

// Nearest centre per sample (ties -> lower index); returns the objective.
inline double assign_all(const std::vector<double>& x, std::size_t n, const std::vector<double>& centers,
                         int K, std::vector<int>& label, std::vector<double>& dist) {
  parallel_for(n, [&](std::size_t i) {
    const double* p = x.data() + i * kNumFilters;
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (int k = 0; k < K; ++k) {
      const double d = sq_dist(p, centers.data() + static_cast<std::size_t>(k) * kNumFilters);
      if (d < best) {
        best = d;
        arg = k;
      }
    }
    label[i] = arg;
    dist[i] = best;
  });
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) total += dist[i];
  return total;
}

}  // namespace detail

// k-means with k-means++ seeding over per-dimension whitened samples
// (row-major N x 24). Stops when the relative objective decrease drops below
// tol or after max_iters Lloyd iterations.
inline TextonDictionary learn_dictionary(std::span<const double> samples, int K, std::uint64_t seed,
                                         int max_iters = 100, double tol = 1e-6) {
  if (samples.size() % kNumFilters != 0)
    throw std::invalid_argument("samples must be rows of 24 responses");
  const std::size_t n = samples.size() / kNumFilters;
  if (K < 1) throw std::invalid_argument("K must be positive");
  if (n < static_cast<std::size_t>(K))
    throw std::invalid_argument("need at least K samples (have " + std::to_string(n) + ", K=" +
                                std::to_string(K) + ")");

  TextonDictionary dict;
  dict.K = K;
  dict.mean.assign(kNumFilters, 0.0);
  dict.scale.assign(kNumFilters, 1.0);
  bool any_variance = false;
  for (std::size_t d = 0; d < kDims; ++d) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += samples[i * kDims + d];
    const double m = s / static_cast<double>(n);
    double v = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = samples[i * kDims + d] - m;
      v += t * t;
    }
    const double sd = std::sqrt(v / static_cast<double>(n));
    dict.mean[d] = m;
    if (sd > 1e-12 * std::max(1.0, std::abs(m))) {
      dict.scale[d] = sd;
      any_variance = true;
    }
  }
  if (!any_variance) throw std::invalid_argument("degenerate samples: all responses identical");

  std::vector<double> x(samples.size());
  for (std::size_t i = 0; i < n; ++i) dict.whiten(samples.subspan(i * kNumFilters, kNumFilters), &x[i * kNumFilters]);

  // k-means++ seeding.
  std::mt19937_64 rng(seed);
  auto& centers = dict.centers;
  centers.assign(static_cast<std::size_t>(K) * kNumFilters, 0.0);
  auto set_center = [&](int k, std::size_t i) {
    std::copy_n(&x[i * kNumFilters], kNumFilters, &centers[static_cast<std::size_t>(k) * kNumFilters]);
  };
  set_center(0, std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = detail::sq_dist(&x[i * kNumFilters], centers.data());
  for (int k = 1; k < K; ++k) {
    double total = 0;
    for (double v : d2) total += v;
    if (!(total > 0))
      throw std::invalid_argument("fewer than K distinct samples (K=" + std::to_string(K) + ")");
    double r = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      r -= d2[i];
      if (r < 0 && d2[i] > 0) {
        pick = i;
        break;
      }
    }
    while (d2[pick] == 0) --pick;  // rounding fallthrough lands on a zero-weight tail
    set_center(k, pick);
    const double* c = &centers[static_cast<std::size_t>(k) * kNumFilters];
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], detail::sq_dist(&x[i * kNumFilters], c));
  }

  std::vector<int> label(n);
  std::vector<double> dist(n);
  double prev = detail::assign_all(x, n, centers, K, label, dist);
  dict.objective_history.push_back(prev);
  for (int it = 0; it < max_iters && prev > 0; ++it) {
    std::vector<double> sum(centers.size(), 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(K), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(label[i]);
      ++count[k];
      for (std::size_t d = 0; d < kDims; ++d) sum[k * kDims + d] += x[i * kDims + d];
    }
    for (int k = 0; k < K; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      if (count[kk] > 0) {
        for (std::size_t d = 0; d < kDims; ++d)
          centers[kk * kDims + d] = sum[kk * kDims + d] / static_cast<double>(count[kk]);
      } else {
        // Empty cluster: move it onto the worst-fit sample.
        const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        set_center(k, far);
        dist[far] = 0;
      }
    }
    const double cur = detail::assign_all(x, n, centers, K, label, dist);
    dict.objective_history.push_back(cur);
    const bool converged = prev - cur <= tol * prev;
    prev = cur;
    if (converged) break;
  }
  dict.objective = prev;
  return dict;
}

struct SoftAssignment {
  std::array<int, kSoftNeighbors> index{};
  std::array<double, kSoftNeighbors> weight{};
};

// The 8 nearest centres (ascending distance, ties -> lower index) with
// weights w_j proportional to exp(-d_j^2 / s^2), s^2 = half the mean squared
// distance of the 8, normalized to sum to 1.
inline SoftAssignment assign_soft(std::span<const double> response, const TextonDictionary& dict) {
  if (dict.K < kSoftNeighbors)
    throw std::invalid_argument("soft assignment needs at least 8 textons");
  std::array<double, kNumFilters> q{};
  dict.whiten(response, q.data());
  const auto K = static_cast<std::size_t>(dict.K);
  thread_local std::vector<double> d2;
  thread_local std::vector<int> order;
  d2.resize(K);
  order.resize(K);
  for (std::size_t k = 0; k < K; ++k) d2[k] = detail::sq_dist(q.data(), dict.centers.data() + k * kNumFilters);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + kSoftNeighbors, order.end(), [&](int a, int b) {
    return d2[static_cast<std::size_t>(a)] < d2[static_cast<std::size_t>(b)] ||
           (d2[static_cast<std::size_t>(a)] == d2[static_cast<std::size_t>(b)] && a < b);
  });

  SoftAssignment out;
  double mean_d2 = 0;
  for (int j = 0; j < kSoftNeighbors; ++j) {
    out.index[static_cast<std::size_t>(j)] = order[static_cast<std::size_t>(j)];
    mean_d2 += d2[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])];
  }
  mean_d2 /= kSoftNeighbors;
  const double bandwidth = 0.5 * mean_d2;
  const double d0 = d2[static_cast<std::size_t>(out.index[0])];
  double total = 0;
  for (int j = 0; j < kSoftNeighbors; ++j) {
    const double dj = d2[static_cast<std::size_t>(out.index[static_cast<std::size_t>(j)])];
    const double w = bandwidth > 0 ? std::exp(-(dj - d0) / bandwidth) : 1.0;
    out.weight[static_cast<std::size_t>(j)] = w;
    total += w;
  }
  for (auto& w : out.weight) w /= total;
  return out;
}

// Index of the nearest centre (ties -> lower index).
inline int hard_assign(std::span<const double> response, const TextonDictionary& dict) {
  std::array<double, kNumFilters> q{};
  dict.whiten(response, q.data());
  int arg = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < dict.K; ++k) {
    const double d = detail::sq_dist(q.data(), dict.center(k).data());
    if (d < best) {
      best = d;
      arg = k;
    }
  }
  return arg;
}

struct TextonMap {
  int width = 0, height = 0, K = 0;
  Mask valid;
  BoundingBox disk_bounds;
  std::vector<int> pixels;  // same order as the source ResponseStack
  std::vector<SoftAssignment> assignments;
};

inline TextonMap texton_map(const ResponseStack& stack, const TextonDictionary& dict) {
  if (stack.count() == 0) throw std::invalid_argument("texton_map: response stack has no valid pixels");
  TextonMap map;
  map.width = stack.width;
  map.height = stack.height;
  map.K = dict.K;
  map.valid = stack.valid;
  map.disk_bounds = stack.disk_bounds;
  map.pixels = stack.pixels;
  map.assignments.resize(stack.count());
  parallel_for(stack.count(), [&](std::size_t i) { map.assignments[i] = assign_soft(stack.at(i), dict); });
  return map;
}

// Whole-map soft texton histogram, normalized to sum to 1.
inline std::vector<double> texton_histogram(const TextonMap& map) {
  std::vector<double> h(static_cast<std::size_t>(map.K), 0.0);
  for (const auto& a : map.assignments)
    for (int j = 0; j < kSoftNeighbors; ++j)
      h[static_cast<std::size_t>(a.index[static_cast<std::size_t>(j)])] += a.weight[static_cast<std::size_t>(j)];
  const double n = static_cast<double>(map.assignments.size());
  for (double& v : h) v /= n;
  return h;
}

// Per-disk sample quotas: max_samples split evenly across classes, then
// evenly across the disks of each class (remainders to the earliest disks).
inline std::vector<std::size_t> stratified_quotas(std::span<const int> labels, std::size_t max_samples) {
  int C = 0;
  for (int l : labels) C = std::max(C, l + 1);
  std::vector<std::size_t> out(labels.size(), 0);
  for (int c = 0; c < C; ++c) {
    const auto cu = static_cast<std::size_t>(c), Cu = static_cast<std::size_t>(C);
    const std::size_t class_quota = max_samples / Cu + (cu < max_samples % Cu ? 1 : 0);
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) members.push_back(i);
    if (members.empty()) continue;
    for (std::size_t j = 0; j < members.size(); ++j)
      out[members[j]] = class_quota / members.size() + (j < class_quota % members.size() ? 1 : 0);
  }
  return out;
}

// Up to `quota` response rows drawn uniformly without replacement, in pixel order.
inline std::vector<double> sample_responses(const ResponseStack& stack, std::size_t quota, std::uint64_t seed) {
  std::vector<std::size_t> idx(stack.count());
  std::iota(idx.begin(), idx.end(), 0);
  if (idx.size() > quota) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < quota; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(quota);
    std::sort(idx.begin(), idx.end());
  }
  std::vector<double> out;
  out.reserve(idx.size() * kNumFilters);
  for (auto i : idx) {
    auto r = stack.at(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

}  // namespace refhash
