#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "refhash/common.hpp"
#include "refhash/layout.hpp"

namespace refhash {

inline constexpr int kMaxClasses = 64;
inline constexpr std::size_t kMidpointLimit = 64;
inline constexpr int kQuantileThresholds = 32;

// Row-major N x F matrix of S(r, t) features, column f = r * K + t.
struct FeatureMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t f) const { return values[i * cols + f]; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
  void append(std::span<const double> r) {
    if (rows == 0 && cols == 0) cols = r.size();
    if (r.size() != cols) throw std::invalid_argument("feature row length mismatch");
    values.insert(values.end(), r.begin(), r.end());
    ++rows;
  }
};

// Candidate thresholds for a feature column: midpoints between consecutive
// unique values when there are at most 64 of them, otherwise midpoints at 32
// weighted quantiles. A constant column yields its single value, which puts
// every sample on the "<= threshold" side.
inline std::vector<double> candidate_thresholds(std::span<const double> values,
                                                std::span<const double> weights) {
  if (values.size() != weights.size()) throw std::invalid_argument("values/weights size mismatch");
  if (values.empty()) return {};
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> uniq;
  std::vector<double> cum;
  for (auto i : order) {
    if (uniq.empty() || values[i] != uniq.back()) {
      uniq.push_back(values[i]);
      cum.push_back(cum.empty() ? 0.0 : cum.back());
    }
    cum.back() += weights[i];
  }
  if (uniq.size() == 1) return {uniq[0]};
  std::vector<double> out;
  if (uniq.size() <= kMidpointLimit) {
    for (std::size_t i = 0; i + 1 < uniq.size(); ++i) out.push_back(0.5 * (uniq[i] + uniq[i + 1]));
    return out;
  }
  const double total = cum.back();
  std::size_t i = 0;
  for (int q = 1; q <= kQuantileThresholds; ++q) {
    const double target = total * q / (kQuantileThresholds + 1);
    while (i + 1 < uniq.size() && cum[i] < target) ++i;
    if (i + 1 >= uniq.size()) break;
    const double t = 0.5 * (uniq[i] + uniq[i + 1]);
    if (out.empty() || t > out.back()) out.push_back(t);
  }
  return out;
}

// Regression stump h = a * [x > threshold] + b.
struct Stump {
  double threshold = 0;
  double a = 0;
  double b = 0;
  double error = 0;
};

// Weighted least-squares stump over the given thresholds. For each threshold
// b is the weighted mean of z on the "<=" side and a + b the weighted mean on
// the ">" side (an empty side takes the overall weighted mean). Ties in error
// go to the smallest threshold.
inline Stump fit_stump(std::span<const double> values, std::span<const double> weights,
                       std::span<const double> z, std::span<const double> thresholds) {
  const std::size_t n = values.size();
  if (weights.size() != n || z.size() != n) throw std::invalid_argument("fit_stump: size mismatch");
  if (thresholds.empty()) throw std::invalid_argument("fit_stump: no candidate thresholds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> sorted_t(thresholds.begin(), thresholds.end());
  std::sort(sorted_t.begin(), sorted_t.end());

  double W = 0, Z = 0, Q = 0;
  for (std::size_t i = 0; i < n; ++i) {
    W += weights[i];
    Z += weights[i] * z[i];
    Q += weights[i] * z[i] * z[i];
  }
  if (!(W > 0)) throw std::invalid_argument("fit_stump: total weight must be positive");
  const double mean = Z / W;

  Stump best;
  best.error = std::numeric_limits<double>::infinity();
  double wl = 0, zl = 0;
  std::size_t p = 0;
  for (double t : sorted_t) {
    while (p < n && values[order[p]] <= t) {
      wl += weights[order[p]];
      zl += weights[order[p]] * z[order[p]];
      ++p;
    }
    const double wr = W - wl, zr = Z - zl;
    const double b = wl > 0 ? zl / wl : mean;
    const double ab = wr > 0 ? zr / wr : mean;
    double err = Q - (wl > 0 ? zl * zl / wl : 0.0) - (wr > 0 ? zr * zr / wr : 0.0);
    err = std::max(err, 0.0);
    if (err < best.error) best = {t, ab - b, b, err};
  }
  return best;
}

template <typename Fit>
struct SubsetSearchResult {
  std::uint64_t subset = 0;  // bit c set when class c shares the learner
  Fit fit{};
  int evaluated = 0;         // number of subsets scored
};

// Greedy class-subset search: start from the best single class, then keep
// adding the class whose inclusion gives the lowest joint error until all
// classes are in, and return the best prefix. `evaluate(current, c)` scores
// current | {c} and returns a Fit with a `double error` member;
// `commit(subset, c)` is called after class c joins. Scores C(C+1)/2 subsets.
template <typename Fit, typename Evaluate, typename Commit>
SubsetSearchResult<Fit> greedy_subset_search(int num_classes, Evaluate&& evaluate, Commit&& commit) {
  if (num_classes < 1 || num_classes > kMaxClasses)
    throw std::invalid_argument("greedy_subset_search: class count must be in [1, 64]");
  SubsetSearchResult<Fit> best;
  bool have_best = false;
  std::uint64_t current = 0;
  int evaluated = 0;
  for (int step = 0; step < num_classes; ++step) {
    int add = -1;
    Fit step_fit{};
    for (int c = 0; c < num_classes; ++c) {
      if (current >> c & 1) continue;
      Fit f = evaluate(current, c);
      ++evaluated;
      if (add < 0 || f.error < step_fit.error) {
        add = c;
        step_fit = f;
      }
    }
    current |= std::uint64_t{1} << add;
    commit(current, add);
    if (!have_best || step_fit.error < best.fit.error) {
      best.subset = current;
      best.fit = step_fit;
      have_best = true;
    }
  }
  best.evaluated = evaluated;
  return best;
}

// Shared weak learner: for classes in the subset h = a * [S(r,t) > threshold] + b,
// for the others h = k[c].
struct WeakLearner {
  int region = 0;
  int texton = 0;
  double threshold = 0;
  double a = 0;
  double b = 0;
  std::uint64_t shared = 0;
  std::vector<double> k;  // per class; entries of sharing classes are 0

  bool shares(int c) const { return (shared >> c & 1) != 0; }
  double operator()(double feature, int c) const {
    return shares(c) ? a * (feature > threshold ? 1.0 : 0.0) + b : k[static_cast<std::size_t>(c)];
  }
};

struct StrongClassifier {
  std::vector<std::string> classes;
  int R = 0, K = 0;
  std::vector<WeakLearner> learners;

  std::size_t feature_count() const { return static_cast<std::size_t>(R) * static_cast<std::size_t>(K); }

  // Unique (region, texton) pairs in order of first selection.
  std::vector<FeaturePair> selected_pairs() const {
    std::vector<FeaturePair> out;
    for (const auto& l : learners) {
      FeaturePair p{l.region, l.texton};
      if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
    }
    return out;
  }
};

struct Classification {
  std::vector<double> scores;
  int label = 0;
};

// H(x, c) = sum of weak learner outputs; label = argmax, ties resolved to the
// lexicographically first class name.
inline Classification classify(const StrongClassifier& H, std::span<const double> features) {
  if (features.size() != H.feature_count())
    throw std::invalid_argument("classify: expected " + std::to_string(H.feature_count()) +
                                " features, got " + std::to_string(features.size()));
  const int C = static_cast<int>(H.classes.size());
  Classification out;
  out.scores.assign(static_cast<std::size_t>(C), 0.0);
  for (const auto& l : H.learners) {
    const double v = features[static_cast<std::size_t>(l.region) * static_cast<std::size_t>(H.K) +
                              static_cast<std::size_t>(l.texton)];
    for (int c = 0; c < C; ++c) out.scores[static_cast<std::size_t>(c)] += l(v, c);
  }
  for (int c = 1; c < C; ++c) {
    const auto cu = static_cast<std::size_t>(c), bu = static_cast<std::size_t>(out.label);
    if (out.scores[cu] > out.scores[bu] ||
        (out.scores[cu] == out.scores[bu] && H.classes[cu] < H.classes[bu]))
      out.label = c;
  }
  return out;
}

// Weights w[i][c] = exp(-z[i][c] * H[i][c]) and one-vs-rest labels z = +/-1.
struct BoostState {
  std::size_t N = 0;
  int C = 0;
  std::vector<double> scores;   // N * C
  std::vector<double> weights;  // N * C
  std::vector<double> z;        // N * C

  double exp_loss() const {
    double s = 0;
    for (double w : weights) s += w;
    return s;
  }
};

struct BoostOptions {
  int rounds = 700;
  double tau = 0.01;
  std::uint64_t seed = 0;
};

struct BoostLog {
  std::vector<double> exp_loss;  // before round 1 and after every round
  std::vector<double> wse;       // weighted squared error of each chosen learner
  std::vector<int> subsets_evaluated;
};

struct BoostResult {
  StrongClassifier classifier;
  BoostLog log;
};

namespace detail {

// Per-class cumulative weight / weighted-label sums on the "<=" side of every
// candidate threshold of one feature column.
struct ColumnSweep {
  std::size_t column = 0;
  std::vector<double> thresholds;
  std::vector<double> wl;  // C * T
  std::vector<double> zl;  // C * T
};

inline ColumnSweep sweep_column(const FeatureMatrix& X, std::size_t column, const BoostState& st,
                                std::span<const double> sample_weight) {
  ColumnSweep s;
  s.column = column;
  const std::size_t N = X.rows;
  std::vector<double> vals(N);
  for (std::size_t i = 0; i < N; ++i) vals[i] = X(i, column);
  s.thresholds = candidate_thresholds(vals, sample_weight);
  const std::size_t T = s.thresholds.size();
  const auto C = static_cast<std::size_t>(st.C);
  s.wl.assign(C * T, 0.0);
  s.zl.assign(C * T, 0.0);
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return vals[a] < vals[b]; });
  std::vector<double> accw(C, 0.0), accz(C, 0.0);
  std::size_t p = 0;
  for (std::size_t j = 0; j < T; ++j) {
    while (p < N && vals[order[p]] <= s.thresholds[j]) {
      const std::size_t i = order[p++];
      for (std::size_t c = 0; c < C; ++c) {
        accw[c] += st.weights[i * C + c];
        accz[c] += st.weights[i * C + c] * st.z[i * C + c];
      }
    }
    for (std::size_t c = 0; c < C; ++c) {
      s.wl[c * T + j] = accw[c];
      s.zl[c * T + j] = accz[c];
    }
  }
  return s;
}

struct JointFit {
  double error = std::numeric_limits<double>::infinity();
  std::size_t candidate = 0;
  std::size_t threshold = 0;
};

}  // namespace detail

// Chooses the weak learner minimizing the weighted squared error
//   J = sum_c sum_i w_i^c (z_i^c - h(i, c))^2
// over the candidate columns, their thresholds and greedily grown class
// subsets. Returns the learner with its J and the subset count scored.
inline std::tuple<WeakLearner, double, int> select_weak_learner(const FeatureMatrix& X, const BoostState& st,
                                                                std::span<const std::size_t> candidates,
                                                                int K) {
  const auto C = static_cast<std::size_t>(st.C);
  const std::size_t N = st.N;
  std::vector<double> W(C, 0.0), Z(C, 0.0), base(C, 0.0);
  std::vector<double> sample_weight(N, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t c = 0; c < C; ++c) {
      const double w = st.weights[i * C + c];
      W[c] += w;
      Z[c] += w * st.z[i * C + c];
      sample_weight[i] += w;
    }
  for (std::size_t c = 0; c < C; ++c) base[c] = std::max(0.0, W[c] - Z[c] * Z[c] / W[c]);

  std::vector<detail::ColumnSweep> sweeps(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t j) {
    sweeps[j] = detail::sweep_column(X, candidates[j], st, sample_weight);
  });

  // Running sums for the classes already in the subset.
  double cur_W = 0, cur_Z = 0, rest = 0;
  for (double v : base) rest += v;
  std::vector<std::vector<double>> cur_wl(candidates.size()), cur_zl(candidates.size());
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    cur_wl[j].assign(sweeps[j].thresholds.size(), 0.0);
    cur_zl[j].assign(sweeps[j].thresholds.size(), 0.0);
  }

  auto evaluate = [&](std::uint64_t, int added) {
    const auto c = static_cast<std::size_t>(added);
    const double sW = cur_W + W[c], sZ = cur_Z + Z[c];
    const double others = rest - base[c];
    detail::JointFit best;
    for (std::size_t j = 0; j < sweeps.size(); ++j) {
      const auto& s = sweeps[j];
      const std::size_t T = s.thresholds.size();
      for (std::size_t t = 0; t < T; ++t) {
        const double wl = cur_wl[j][t] + s.wl[c * T + t];
        const double zl = cur_zl[j][t] + s.zl[c * T + t];
        const double wr = sW - wl, zr = sZ - zl;
        double shared = sW - (wl > 0 ? zl * zl / wl : 0.0) - (wr > 0 ? zr * zr / wr : 0.0);
        const double err = std::max(shared, 0.0) + others;
        if (err < best.error) best = {err, j, t};
      }
    }
    return best;
  };
  auto commit = [&](std::uint64_t, int added) {
    const auto c = static_cast<std::size_t>(added);
    cur_W += W[c];
    cur_Z += Z[c];
    rest -= base[c];
    for (std::size_t j = 0; j < sweeps.size(); ++j) {
      const std::size_t T = sweeps[j].thresholds.size();
      for (std::size_t t = 0; t < T; ++t) {
        cur_wl[j][t] += sweeps[j].wl[c * T + t];
        cur_zl[j][t] += sweeps[j].zl[c * T + t];
      }
    }
  };
  auto search = greedy_subset_search<detail::JointFit>(st.C, evaluate, commit);

  const auto& s = sweeps[search.fit.candidate];
  const std::size_t T = s.thresholds.size(), t = search.fit.threshold;
  double sW = 0, sZ = 0, wl = 0, zl = 0;
  WeakLearner h;
  h.k.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    if (search.subset >> c & 1) {
      sW += W[c];
      sZ += Z[c];
      wl += s.wl[c * T + t];
      zl += s.zl[c * T + t];
    } else {
      h.k[c] = Z[c] / W[c];
    }
  }
  const double mean = sZ / sW;
  const double wr = sW - wl, zr = sZ - zl;
  h.b = wl > 0 ? zl / wl : mean;
  h.a = (wr > 0 ? zr / wr : mean) - h.b;
  h.threshold = s.thresholds[t];
  h.shared = search.subset;
  h.region = static_cast<int>(s.column / static_cast<std::size_t>(K));
  h.texton = static_cast<int>(s.column % static_cast<std::size_t>(K));
  return {h, search.fit.error, search.evaluated};
}

inline BoostState initial_state(std::span<const int> labels, int C) {
  BoostState st;
  st.N = labels.size();
  st.C = C;
  const auto Cu = static_cast<std::size_t>(C);
  st.scores.assign(st.N * Cu, 0.0);
  st.weights.assign(st.N * Cu, 1.0);
  st.z.assign(st.N * Cu, -1.0);
  for (std::size_t i = 0; i < st.N; ++i) st.z[i * Cu + static_cast<std::size_t>(labels[i])] = 1.0;
  return st;
}

// Joint Boosting over the N x (R*K) feature matrix. Each round examines
// max(1, ceil(tau * R * K)) columns drawn without replacement, adds the best
// shared stump to H and recomputes w = exp(-z H). `observer`, if set, sees the
// state after every round.
inline BoostResult boost_train(const FeatureMatrix& X, std::span<const int> labels,
                               const std::vector<std::string>& classes, int R, int K,
                               const BoostOptions& opts,
                               const std::function<void(int, const BoostState&)>& observer = {}) {
  const int C = static_cast<int>(classes.size());
  if (C < 1 || C > kMaxClasses) throw std::invalid_argument("class count must be in [1, 64]");
  if (opts.rounds < 1) throw std::invalid_argument("rounds must be at least 1");
  if (!(opts.tau > 0 && opts.tau <= 1)) throw std::invalid_argument("tau must lie in (0, 1]");
  if (X.rows != labels.size()) throw std::invalid_argument("feature rows and labels differ in count");
  if (R < 1 || K < 1 || X.cols != static_cast<std::size_t>(R) * static_cast<std::size_t>(K))
    throw std::invalid_argument("feature matrix must have R*K columns");
  std::vector<int> per_class(static_cast<std::size_t>(C), 0);
  for (int l : labels) {
    if (l < 0 || l >= C) throw std::invalid_argument("label out of range");
    ++per_class[static_cast<std::size_t>(l)];
  }
  for (int c = 0; c < C; ++c)
    if (per_class[static_cast<std::size_t>(c)] == 0)
      throw std::invalid_argument("class '" + classes[static_cast<std::size_t>(c)] + "' has no training samples");

  BoostResult out;
  out.classifier.classes = classes;
  out.classifier.R = R;
  out.classifier.K = K;
  BoostState st = initial_state(labels, C);
  out.log.exp_loss.push_back(st.exp_loss());

  const std::size_t F = X.cols;
  const auto n_cand = std::min<std::size_t>(
      F, std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(opts.tau * static_cast<double>(F) - 1e-9))));
  std::vector<std::size_t> perm(F);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> cand(n_cand);
  const auto Cu = static_cast<std::size_t>(C);

  for (int m = 0; m < opts.rounds; ++m) {
    for (std::size_t j = 0; j < n_cand; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, F - 1);
      std::swap(perm[j], perm[pick(rng)]);
      cand[j] = perm[j];
    }
    std::sort(cand.begin(), cand.end());

    auto [h, wse, evaluated] = select_weak_learner(X, st, cand, K);
    const std::size_t col = static_cast<std::size_t>(h.region) * static_cast<std::size_t>(K) +
                            static_cast<std::size_t>(h.texton);
    for (std::size_t i = 0; i < st.N; ++i) {
      const double v = X(i, col);
      for (std::size_t c = 0; c < Cu; ++c) {
        st.scores[i * Cu + c] += h(v, static_cast<int>(c));
        st.weights[i * Cu + c] = std::exp(-st.z[i * Cu + c] * st.scores[i * Cu + c]);
      }
    }
    out.classifier.learners.push_back(std::move(h));
    out.log.wse.push_back(wse);
    out.log.subsets_evaluated.push_back(evaluated);
    out.log.exp_loss.push_back(st.exp_loss());
    if (observer) observer(m, st);
  }
  return out;
}

}  // namespace refhash
