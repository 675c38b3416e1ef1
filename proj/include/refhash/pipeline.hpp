#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "refhash/binhash.hpp"
#include "refhash/common.hpp"
#include "refhash/confusion.hpp"
#include "refhash/disk_synth.hpp"
#include "refhash/filterbank.hpp"
#include "refhash/jointboost.hpp"
#include "refhash/layout.hpp"
#include "refhash/manifest.hpp"
#include "refhash/model_file.hpp"
#include "refhash/png_io.hpp"
#include "refhash/texton.hpp"

namespace refhash {

// ---------------------------------------------------------------------------
// Seeds

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent per-stage streams derived from the one user seed.
enum class SeedStream : std::uint64_t { split = 1, sampling, kmeans, regions, boost, embedder };

inline std::uint64_t derive_seed(std::uint64_t seed, SeedStream s, std::uint64_t sub = 0) {
  return splitmix64(splitmix64(seed ^ (static_cast<std::uint64_t>(s) << 56)) + sub);
}

// Runs fn, re-tagging plain exceptions with the stage they came from.
template <typename Fn>
auto staged(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

// ---------------------------------------------------------------------------
// Datasets

// Labelled disks addressed by index; images are loaded on demand.
struct Dataset {
  std::vector<std::string> classes;  // sorted unique labels
  std::vector<int> labels;           // index into classes
  std::vector<std::string> ids;      // manifest paths, or synthetic names
  std::function<ReflectanceDisk(std::size_t)> load;

  std::size_t size() const { return labels.size(); }
};

inline std::vector<std::string> sorted_classes(const std::vector<std::string>& labels) {
  std::set<std::string> s(labels.begin(), labels.end());
  return {s.begin(), s.end()};
}

inline int class_index(const std::vector<std::string>& classes, const std::string& label) {
  auto it = std::lower_bound(classes.begin(), classes.end(), label);
  if (it == classes.end() || *it != label) return -1;
  return static_cast<int>(it - classes.begin());
}

// Reads one manifest image. The mask comes from the sidecar when present,
// otherwise it is the largest centred circle.
inline ReflectanceDisk load_manifest_disk(const Manifest& m, const ManifestRow& row) {
  const auto path = m.resolve(row);
  ReflectanceDisk d;
  d.pixels = png::to_unit(png::read_gray8(path));
  const auto sidecar = mask_sidecar_path(path);
  if (std::filesystem::exists(sidecar)) {
    const auto raw = png::read_gray8(sidecar);
    if (raw.width() != d.pixels.width() || raw.height() != d.pixels.height())
      throw StageError("manifest", "mask " + sidecar.string() + " does not match the size of " + path.string());
    d.mask = Mask(raw.width(), raw.height(), 0);
    for (std::size_t i = 0; i < raw.size(); ++i) d.mask.data()[i] = raw.data()[i] > 127 ? 1 : 0;
  } else {
    d.mask = disk_mask(d.pixels.width(), d.pixels.height(),
                       inscribed_radius(d.pixels.width(), d.pixels.height()));
  }
  d.class_label = row.label;
  d.instance_id = row.instance;
  d.illum_angle_deg = row.illum_angle_deg;
  d.exposure_tag = row.exposure;
  return d;
}

inline Dataset dataset_from_manifest(const Manifest& m) {
  Dataset ds;
  ds.classes = m.classes();
  for (const auto& r : m.rows) {
    ds.labels.push_back(class_index(ds.classes, r.label));
    ds.ids.push_back(r.path);
  }
  auto shared = std::make_shared<Manifest>(m);
  ds.load = [shared](std::size_t i) {
    return staged("manifest", [&] { return load_manifest_disk(*shared, shared->rows.at(i)); });
  };
  return ds;
}

inline Dataset dataset_from_disks(std::vector<ReflectanceDisk> disks) {
  Dataset ds;
  std::vector<std::string> names;
  for (const auto& d : disks) names.push_back(d.class_label);
  ds.classes = sorted_classes(names);
  for (std::size_t i = 0; i < disks.size(); ++i) {
    ds.labels.push_back(class_index(ds.classes, disks[i].class_label));
    ds.ids.push_back("disk" + std::to_string(i));
  }
  auto shared = std::make_shared<std::vector<ReflectanceDisk>>(std::move(disks));
  ds.load = [shared](std::size_t i) { return shared->at(i); };
  return ds;
}

// ---------------------------------------------------------------------------
// Splits

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> members_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> out(ds.classes.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  return out;
}

inline void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

}  // namespace detail

// Class-stratified holdout with n_train training disks in total. Per-class
// shares are proportional (largest remainder, ties to the lower class index)
// and every class keeps at least one disk on each side.
inline Split holdout_split(const Dataset& ds, std::size_t n_train, std::uint64_t seed) {
  auto members = detail::members_by_class(ds);
  const std::size_t C = members.size();
  for (std::size_t c = 0; c < C; ++c)
    if (members[c].size() < 2)
      throw StageError("split", "class '" + ds.classes[c] + "' needs at least 2 disks for a holdout split");
  if (n_train < C || n_train > ds.size() - C)
    throw StageError("split", "holdout training size must lie in [" + std::to_string(C) + ", " +
                                  std::to_string(ds.size() - C) + "], got " + std::to_string(n_train));

  std::vector<std::size_t> quota(C);
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const double exact = static_cast<double>(n_train) * static_cast<double>(members[c].size()) /
                         static_cast<double>(ds.size());
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    rem.emplace_back(exact - std::floor(exact), c);
    assigned += quota[c];
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < n_train; ++j, ++assigned) ++quota[rem[j % C].second];
  // Enforce one disk per side by moving quota between classes.
  for (std::size_t c = 0; c < C; ++c) {
    while (quota[c] < 1 || quota[c] > members[c].size() - 1) {
      const bool need_more = quota[c] < 1;
      std::size_t donor = C;
      for (std::size_t o = 0; o < C && donor == C; ++o) {
        if (o == c) continue;
        if (need_more ? quota[o] > 1 : quota[o] < members[o].size() - 1) donor = o;
      }
      if (need_more) {
        --quota[donor];
        ++quota[c];
      } else {
        ++quota[donor];
        --quota[c];
      }
    }
  }

  std::mt19937_64 rng(derive_seed(seed, SeedStream::split));
  Split s;
  for (std::size_t c = 0; c < C; ++c) {
    auto v = members[c];
    detail::shuffle(v, rng);
    s.train.insert(s.train.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    s.test.insert(s.test.end(), v.begin() + static_cast<std::ptrdiff_t>(quota[c]), v.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

// Fraction form: round(fraction * N) training disks.
inline Split holdout_fraction(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction < 1)) throw StageError("split", "holdout fraction must lie in (0, 1)");
  return holdout_split(ds, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size()))),
                       seed);
}

// Stratified k folds: within each shuffled class, member j goes to fold j % k.
inline std::vector<Split> kfold_splits(const Dataset& ds, int k, std::uint64_t seed) {
  if (k < 2) throw StageError("split", "kfold needs at least 2 folds");
  auto members = detail::members_by_class(ds);
  for (std::size_t c = 0; c < members.size(); ++c)
    if (members[c].size() < static_cast<std::size_t>(k))
      throw StageError("split", "class '" + ds.classes[c] + "' has fewer disks than folds");
  std::mt19937_64 rng(derive_seed(seed, SeedStream::split));
  std::vector<int> fold(ds.size(), 0);
  for (auto& v : members) {
    detail::shuffle(v, rng);
    for (std::size_t j = 0; j < v.size(); ++j) fold[v[j]] = static_cast<int>(j % static_cast<std::size_t>(k));
  }
  std::vector<Split> out(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (int f = 0; f < k; ++f) (fold[i] == f ? out[static_cast<std::size_t>(f)].test : out[static_cast<std::size_t>(f)].train).push_back(i);
  return out;
}

// Split specification: holdout:N (count), holdout:0.F (fraction), kfold:K,
// explicit:FILE (one test path per line; everything else trains).
struct SplitSpec {
  enum class Kind { holdout, kfold, explicit_list } kind = Kind::holdout;
  double holdout = 0.5;
  int folds = 5;
  std::filesystem::path file;
};

inline SplitSpec parse_split_spec(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw StageError("split", "split must look like holdout:N, kfold:K or explicit:FILE");
  const std::string kind = s.substr(0, colon), arg = s.substr(colon + 1);
  SplitSpec spec;
  try {
    if (kind == "holdout") {
      std::size_t used = 0;
      spec.holdout = std::stod(arg, &used);
      if (used != arg.size() || !(spec.holdout > 0)) throw std::invalid_argument(arg);
      if (spec.holdout >= 1 && spec.holdout != std::floor(spec.holdout)) throw std::invalid_argument(arg);
    } else if (kind == "kfold") {
      std::size_t used = 0;
      spec.kind = SplitSpec::Kind::kfold;
      spec.folds = std::stoi(arg, &used);
      if (used != arg.size()) throw std::invalid_argument(arg);
    } else if (kind == "explicit") {
      spec.kind = SplitSpec::Kind::explicit_list;
      spec.file = arg;
    } else {
      throw StageError("split", "unknown split kind '" + kind + "'");
    }
  } catch (const std::logic_error&) {
    throw StageError("split", "invalid split argument in '" + s + "'");
  }
  return spec;
}

inline Split holdout_from_spec(const Dataset& ds, double holdout, std::uint64_t seed) {
  return holdout < 1 ? holdout_fraction(ds, holdout, seed)
                     : holdout_split(ds, static_cast<std::size_t>(holdout), seed);
}

inline Split explicit_split(const Dataset& ds, const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw StageError("split", "cannot open split list " + file.string());
  std::set<std::string> test;
  std::string line;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (!line.empty() && line[0] != '#') test.insert(line);
  }
  Split s;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const bool t = test.count(ds.ids[i]) > 0;
    (t ? s.test : s.train).push_back(i);
    if (t) seen.insert(ds.ids[i]);
  }
  for (const auto& p : test)
    if (!seen.count(p)) throw StageError("split", "split list names '" + p + "', which is not in the manifest");
  return s;
}

// ---------------------------------------------------------------------------
// Training

inline void validate_config(const TrainConfig& c) {
  auto fail = [](const std::string& m) { throw StageError("config", m); };
  if (c.textons < kSoftNeighbors) fail("textons must be at least 8");
  if (c.regions < 1) fail("regions must be at least 1");
  if (c.rounds < 1) fail("rounds must be at least 1");
  if (!(c.tau > 0 && c.tau <= 1)) fail("tau must lie in (0, 1]");
  if (c.bits < 1) fail("bits must be at least 1");
  if (c.knn < 1) fail("knn must be at least 1");
  if (c.kmeans_samples < static_cast<std::uint64_t>(c.textons)) fail("kmeans_samples must be at least textons");
  if (c.kmeans_iters < 1) fail("kmeans_iters must be at least 1");
  if (c.itq_iters < 0) fail("itq_iters must be non-negative");
}

// Filtering and texton assignment of one disk.
inline TextonMap disk_texton_map(const ReflectanceDisk& disk, const FilterBank& bank,
                                 const TextonDictionary& dict) {
  const auto stack = staged("filterbank", [&] { return apply_filter_bank(disk, bank); });
  return staged("texton", [&] { return texton_map(stack, dict); });
}

struct DiskFeatures {
  FeatureTable table;             // R x K layout features
  std::vector<double> histogram;  // whole-disk soft texton histogram
};

inline DiskFeatures features_from_map(const TextonMap& map, const RegionSet& regions, bool normalize) {
  DiskFeatures f;
  f.histogram = texton_histogram(map);
  f.table = staged("layout", [&] { return build_feature_table(map, regions, normalize); });
  return f;
}

inline DiskFeatures disk_features(const ReflectanceDisk& disk, const FilterBank& bank,
                                  const TextonDictionary& dict, const RegionSet& regions, bool normalize) {
  return features_from_map(disk_texton_map(disk, bank, dict), regions, normalize);
}

// Upper bound on response stacks held between the two training passes.
inline constexpr std::size_t kStackCacheBytes = std::size_t{1} << 30;

// Output of the shared feature stages: bank, dictionary, regions and the
// per-disk features of the training set.
struct FeatureStage {
  FilterBank bank;
  TextonDictionary dictionary;
  RegionSet regions;
  std::vector<std::string> classes;
  std::vector<std::size_t> train;  // dataset indices
  std::vector<int> labels;         // into `classes`
  FeatureMatrix X;                 // |train| x (R * K)
  std::vector<std::vector<double>> histograms;
};

inline FeatureStage train_features(const Dataset& ds, std::span<const std::size_t> train, const TrainConfig& cfg) {
  validate_config(cfg);
  if (train.empty()) throw StageError("train", "empty training set");
  FeatureStage fs;
  fs.train.assign(train.begin(), train.end());
  std::vector<std::string> names;
  for (auto i : train) names.push_back(ds.classes[static_cast<std::size_t>(ds.labels[i])]);
  fs.classes = sorted_classes(names);
  if (fs.classes.size() < 2) throw StageError("train", "training needs at least 2 classes");
  for (const auto& n : names) fs.labels.push_back(class_index(fs.classes, n));

  fs.bank = staged("filterbank", [&] { return build_filter_bank(cfg.scales); });

  // Response samples per disk. Stacks are kept for the second pass while they
  // fit in the cache budget; the rest are recomputed (same result either way).
  const auto quotas = stratified_quotas(fs.labels, cfg.kmeans_samples);
  std::vector<std::vector<double>> parts(train.size());
  std::vector<std::optional<ResponseStack>> cache(train.size());
  std::atomic<std::size_t> cached_bytes{0};
  parallel_for(train.size(), [&](std::size_t j) {
    const auto disk = ds.load(train[j]);
    auto stack = staged("filterbank", [&] { return apply_filter_bank(disk, fs.bank); });
    parts[j] = sample_responses(stack, quotas[j], derive_seed(cfg.seed, SeedStream::sampling, j));
    const std::size_t bytes = stack.responses.size() * sizeof(double);
    if (cached_bytes.fetch_add(bytes) + bytes <= kStackCacheBytes) cache[j] = std::move(stack);
  });
  std::vector<double> samples;
  for (auto& p : parts) {
    samples.insert(samples.end(), p.begin(), p.end());
    std::vector<double>().swap(p);
  }
  fs.dictionary = staged("texton", [&] {
    return learn_dictionary(samples, cfg.textons, derive_seed(cfg.seed, SeedStream::kmeans), cfg.kmeans_iters,
                            cfg.kmeans_tol);
  });
  fs.regions = staged("layout", [&] {
    return sample_regions(cfg.regions, derive_seed(cfg.seed, SeedStream::regions), cfg.min_side, cfg.max_side);
  });

  std::vector<DiskFeatures> feats(train.size());
  parallel_for(train.size(), [&](std::size_t j) {
    if (cache[j]) {
      const auto map = staged("texton", [&] { return texton_map(*cache[j], fs.dictionary); });
      cache[j].reset();
      feats[j] = features_from_map(map, fs.regions, cfg.normalize);
    } else {
      feats[j] = disk_features(ds.load(train[j]), fs.bank, fs.dictionary, fs.regions, cfg.normalize);
    }
  });
  fs.X.cols = static_cast<std::size_t>(cfg.regions) * static_cast<std::size_t>(cfg.textons);
  for (auto& f : feats) {
    fs.X.append(f.table.values);
    fs.histograms.push_back(std::move(f.histogram));
  }
  return fs;
}

inline Model base_model(const Dataset& ds, const FeatureStage& fs, const TrainConfig& cfg) {
  Model m;
  m.config = cfg;
  m.classes = fs.classes;
  for (auto i : fs.train) m.training.push_back(ds.ids[i]);
  m.bank = fs.bank;
  m.dictionary = fs.dictionary;
  m.regions = fs.regions;
  return m;
}

inline void train_histogram_stage(Model& m, const FeatureStage& fs) {
  m.histograms.clear();
  for (std::size_t j = 0; j < fs.train.size(); ++j)
    m.histograms.push_back({fs.histograms[j], fs.labels[j], static_cast<std::int64_t>(fs.train[j])});
}

inline void train_boost_stage(Model& m, const FeatureStage& fs,
                              const std::function<void(int, const BoostState&)>& observer = {}) {
  const auto& cfg = m.config;
  auto result = staged("jointboost", [&] {
    return boost_train(fs.X, fs.labels, fs.classes, cfg.regions, cfg.textons,
                       {cfg.rounds, cfg.tau, derive_seed(cfg.seed, SeedStream::boost)}, observer);
  });
  m.classifier = std::move(result.classifier);
  m.boost_log = std::move(result.log);
}

// Selected-pair features of the training set, as an N x P matrix.
inline Eigen::MatrixXd selected_matrix(const FeatureMatrix& X, int K, std::span<const FeaturePair> pairs) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(X.rows), static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t i = 0; i < X.rows; ++i)
    for (std::size_t p = 0; p < pairs.size(); ++p)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) =
          X(i, static_cast<std::size_t>(pairs[p].region) * static_cast<std::size_t>(K) +
                   static_cast<std::size_t>(pairs[p].texton));
  return out;
}

// Requires a trained classifier in `m`. With clamp_bits an ITQ code is cut to
// the largest length the training data supports, min(bits, pairs, N - 1).
inline void train_hash_stage(Model& m, const FeatureStage& fs, bool clamp_bits = false) {
  auto& cfg = m.config;
  staged("binhash", [&] {
    m.pairs = m.classifier.selected_pairs();
    if (clamp_bits && cfg.embedder == HashMethod::itq)
      cfg.bits = std::max(1, std::min({cfg.bits, static_cast<int>(m.pairs.size()), static_cast<int>(fs.train.size()) - 1}));
    const Eigen::MatrixXd Z0 = selected_matrix(fs.X, cfg.textons, m.pairs);
    m.standardizer = Standardizer::fit(Z0);
    const Eigen::MatrixXd Z = m.standardizer.apply(Z0);
    m.embedder = train_embedder(cfg.embedder, Z, cfg.bits, derive_seed(cfg.seed, SeedStream::embedder),
                                cfg.itq_iters);
    m.database = {};
    for (std::size_t j = 0; j < fs.train.size(); ++j)
      m.database.add(encode(m.embedder, Z.row(static_cast<Eigen::Index>(j)).transpose()), fs.labels[j],
                     static_cast<std::int64_t>(fs.train[j]));
    return 0;
  });
}

// Full training run for cfg.method on the given training disks.
inline Model run_train(const Dataset& ds, std::span<const std::size_t> train, const TrainConfig& cfg,
                       const std::function<void(int, const BoostState&)>& observer = {}) {
  const auto fs = train_features(ds, train, cfg);
  Model m = base_model(ds, fs, cfg);
  switch (cfg.method) {
    case Method::histogram: train_histogram_stage(m, fs); break;
    case Method::boost: train_boost_stage(m, fs, observer); break;
    case Method::hash:
      train_boost_stage(m, fs, observer);
      train_hash_stage(m, fs);
      break;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Prediction

inline double chi_squared(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] + b[i];
    if (t > 0) s += (a[i] - b[i]) * (a[i] - b[i]) / t;
  }
  return 0.5 * s;
}

// 1-nearest neighbour by chi-squared distance; ties go to the smaller disk id.
inline int predict_histogram(const Model& m, std::span<const double> histogram) {
  if (m.histograms.empty()) throw StageError("eval", "model holds no training histograms");
  double best = std::numeric_limits<double>::infinity();
  std::int64_t best_id = 0;
  int label = 0;
  for (const auto& h : m.histograms) {
    const double d = chi_squared(histogram, h.histogram);
    if (d < best || (d == best && h.disk_id < best_id)) {
      best = d;
      best_id = h.disk_id;
      label = h.label;
    }
  }
  return label;
}

inline int predict_boost(const Model& m, const FeatureTable& table) {
  return staged("jointboost", [&] { return classify(m.classifier, table.values).label; });
}

inline Eigen::VectorXd hash_input(const Model& m, const FeatureTable& table) {
  const auto v = extract_feature_vector(table, m.pairs);
  return m.standardizer.apply(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())).eval());
}

inline KnnResult predict_hash(const Model& m, const FeatureTable& table) {
  return staged("binhash", [&] { return hamming_knn(encode(m.embedder, hash_input(m, table)), m.database, m.config.knn); });
}

inline int predict(const Model& m, const DiskFeatures& f) {
  switch (m.config.method) {
    case Method::histogram: return predict_histogram(m, f.histogram);
    case Method::boost: return predict_boost(m, f.table);
    case Method::hash: return predict_hash(m, f.table).label;
  }
  return 0;
}

inline DiskFeatures model_disk_features(const Model& m, const ReflectanceDisk& disk) {
  return disk_features(disk, m.bank, m.dictionary, m.regions, m.config.normalize);
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  ConfusionMatrix confusion;          // summed over folds
  std::vector<double> fold_accuracy;  // one entry for holdout / explicit
  std::vector<std::string> warnings;

  double mean_accuracy() const {
    if (fold_accuracy.empty()) return 0;
    return std::accumulate(fold_accuracy.begin(), fold_accuracy.end(), 0.0) /
           static_cast<double>(fold_accuracy.size());
  }
  // Sample standard deviation over folds; 0 with one fold.
  double stddev_accuracy() const {
    if (fold_accuracy.size() < 2) return 0;
    const double mu = mean_accuracy();
    double s = 0;
    for (double a : fold_accuracy) s += (a - mu) * (a - mu);
    return std::sqrt(s / static_cast<double>(fold_accuracy.size() - 1));
  }
};

// Features of the given disks under a model's bank, dictionary and regions.
inline std::vector<DiskFeatures> model_features(const Model& m, const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<DiskFeatures> out(idx.size());
  parallel_for(idx.size(), [&](std::size_t j) { out[j] = model_disk_features(m, ds.load(idx[j])); });
  return out;
}

// Confusion matrix over the model's classes for precomputed test features.
inline ConfusionMatrix evaluate_features(const Model& m, const Dataset& ds, std::span<const std::size_t> test,
                                         std::span<const DiskFeatures> feats) {
  std::vector<int> truth(test.size());
  for (std::size_t j = 0; j < test.size(); ++j) {
    const auto& name = ds.classes[static_cast<std::size_t>(ds.labels[test[j]])];
    truth[j] = class_index(m.classes, name);
    if (truth[j] < 0) throw StageError("eval", "test class '" + name + "' is not among the model's classes");
  }
  std::vector<int> pred(test.size());
  parallel_for(test.size(), [&](std::size_t j) { pred[j] = predict(m, feats[j]); });
  ConfusionMatrix cm(m.classes);
  for (std::size_t j = 0; j < test.size(); ++j) cm.add(truth[j], pred[j]);
  return cm;
}

inline ConfusionMatrix evaluate_model(const Model& m, const Dataset& ds, std::span<const std::size_t> test) {
  return evaluate_features(m, ds, test, model_features(m, ds, test));
}

inline std::vector<std::string> overlap_warnings(const Model& m, const Dataset& ds, std::span<const std::size_t> test) {
  const std::set<std::string> trained(m.training.begin(), m.training.end());
  std::size_t n = 0;
  for (auto i : test) n += trained.count(ds.ids[i]);
  if (n == 0) return {};
  return {std::to_string(n) + " test disk(s) were part of the model's training set"};
}

// Holdout and explicit splits evaluate the given model; kfold retrains the
// model's configuration on each fold.
inline EvalResult run_eval(const Model& m, const Dataset& ds, const SplitSpec& spec) {
  EvalResult r;
  if (spec.kind == SplitSpec::Kind::kfold) {
    const auto folds = kfold_splits(ds, spec.folds, m.config.seed);
    r.confusion = ConfusionMatrix(ds.classes);
    for (const auto& f : folds) {
      const Model fm = run_train(ds, f.train, m.config);
      const auto cm = evaluate_model(fm, ds, f.test);
      r.fold_accuracy.push_back(cm.accuracy());
      for (std::size_t t = 0; t < cm.size(); ++t)
        for (std::size_t p = 0; p < cm.size(); ++p) {
          const auto tt = static_cast<std::size_t>(class_index(r.confusion.classes, cm.classes[t]));
          const auto pp = static_cast<std::size_t>(class_index(r.confusion.classes, cm.classes[p]));
          r.confusion.counts[tt * r.confusion.size() + pp] += cm(t, p);
        }
    }
    return r;
  }
  const Split s = spec.kind == SplitSpec::Kind::holdout ? holdout_from_spec(ds, spec.holdout, m.config.seed)
                                                        : explicit_split(ds, spec.file);
  if (s.test.empty()) throw StageError("eval", "the split leaves no test disks");
  r.warnings = overlap_warnings(m, ds, s.test);
  r.confusion = evaluate_model(m, ds, s.test);
  r.fold_accuracy.push_back(r.confusion.accuracy());
  return r;
}

// Accuracy of raw (unbinarized) selected features under Euclidean kNN with
// the same standardization, k and ranking rules as the hash model.
inline double euclidean_baseline_accuracy(const Model& m, const Dataset& ds, std::span<const std::size_t> test) {
  if (m.config.method != Method::hash) throw StageError("eval", "euclidean baseline needs a hash model");
  Eigen::MatrixXd Z(static_cast<Eigen::Index>(m.database.size()), static_cast<Eigen::Index>(m.pairs.size()));
  std::vector<int> labels;
  std::vector<std::int64_t> ids;
  std::vector<std::size_t> train_idx;
  for (const auto& e : m.database.entries) train_idx.push_back(static_cast<std::size_t>(e.disk_id));
  std::vector<Eigen::VectorXd> rows(train_idx.size());
  parallel_for(train_idx.size(), [&](std::size_t j) {
    rows[j] = hash_input(m, model_disk_features(m, ds.load(train_idx[j])).table);
  });
  for (std::size_t j = 0; j < rows.size(); ++j) {
    Z.row(static_cast<Eigen::Index>(j)) = rows[j].transpose();
    labels.push_back(m.database.entries[j].label);
    ids.push_back(m.database.entries[j].disk_id);
  }
  std::vector<int> hit(test.size(), 0);
  parallel_for(test.size(), [&](std::size_t j) {
    const auto q = hash_input(m, model_disk_features(m, ds.load(test[j])).table);
    const int pred = euclidean_knn(q, Z, labels, ids, m.config.knn).label;
    hit[j] = m.classes[static_cast<std::size_t>(pred)] == ds.classes[static_cast<std::size_t>(ds.labels[test[j]])];
  });
  return static_cast<double>(std::accumulate(hit.begin(), hit.end(), 0)) / static_cast<double>(test.size());
}

// ---------------------------------------------------------------------------
// Reports

struct ReferenceTarget {
  const char* method;
  double accuracy_percent;
};

// Recognition rates reported for the physical 3600-disk database; listed in
// reports for context, not reproducible on synthetic data.
inline constexpr std::array<ReferenceTarget, 4> kReferenceTargets{{
    {"hash", 92.3},
    {"boost", 84.38},
    {"histogram", 79.53},
    {"histogram (alternate)", 41.94},
}};

inline std::string method_label(const TrainConfig& c) {
  return c.method == Method::hash ? "hash:" + to_string(c.embedder) + ":" + std::to_string(c.bits)
                                  : to_string(c.method);
}

inline std::string eval_summary(const Model& m, const SplitSpec& spec, const EvalResult& r) {
  std::ostringstream os;
  os << "method: " << method_label(m.config) << '\n';
  os << "split: ";
  switch (spec.kind) {
    case SplitSpec::Kind::holdout: os << "holdout " << detail::format_double(spec.holdout); break;
    case SplitSpec::Kind::kfold: os << "kfold " << spec.folds; break;
    case SplitSpec::Kind::explicit_list: os << "explicit " << spec.file.generic_string(); break;
  }
  os << '\n';
  os << "test disks: " << r.confusion.total() << '\n';
  os << "accuracy: " << detail::format_fixed(100.0 * r.confusion.accuracy(), 2) << "%\n";
  if (r.fold_accuracy.size() > 1) {
    os << "fold accuracy: " << detail::format_fixed(100.0 * r.mean_accuracy(), 2) << "% +/- "
       << detail::format_fixed(100.0 * r.stddev_accuracy(), 2) << "% over " << r.fold_accuracy.size()
       << " folds\n";
    for (std::size_t f = 0; f < r.fold_accuracy.size(); ++f)
      os << "  fold " << f + 1 << ": " << detail::format_fixed(100.0 * r.fold_accuracy[f], 2) << "%\n";
  }
  os << "per-class recognition rate:\n";
  for (std::size_t c = 0; c < r.confusion.size(); ++c)
    os << "  " << r.confusion.classes[c] << ": " << detail::format_fixed(r.confusion.row_percent(c, c), 2) << "% ("
       << r.confusion(c, c) << "/" << r.confusion.row_total(c) << ")\n";
  for (const auto& w : r.warnings) os << "warning: " << w << '\n';
  os << "reference rates on the 20-class, 3600-disk physical database (not reproduced here):\n";
  for (const auto& t : kReferenceTargets)
    os << "  " << t.method << ": " << detail::format_fixed(t.accuracy_percent, 2) << "%\n";
  return os.str();
}

inline void write_boost_log_csv(std::ostream& os, const BoostLog& log) {
  os << "round,exp_loss,wse,subsets_evaluated\n";
  os << "0," << detail::format_double(log.exp_loss.at(0)) << ",,\n";
  for (std::size_t m = 0; m < log.wse.size(); ++m)
    os << m + 1 << ',' << detail::format_double(log.exp_loss[m + 1]) << ',' << detail::format_double(log.wse[m])
       << ',' << log.subsets_evaluated[m] << '\n';
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { train_size, bits };

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "train_size") return SweepAxis::train_size;
  if (s == "bits") return SweepAxis::bits;
  throw StageError("sweep", "unknown axis '" + s + "' (expected train_size or bits)");
}

struct SweepRow {
  double value = 0;
  std::string method;
  std::uint64_t seed = 0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  std::string status = "ok";
};

struct SweepOptions {
  SweepAxis axis = SweepAxis::train_size;
  std::vector<double> values;
  std::vector<std::uint64_t> seeds{0};
  double train_fraction = 0.5;  // holdout used by the bits axis
};

namespace detail {

inline std::string error_status(const std::exception& e) {
  if (const auto* s = dynamic_cast<const StageError*>(&e)) return "error [" + s->stage() + "]: " + e.what();
  return std::string("error: ") + e.what();
}

}  // namespace detail

// train_size: for every seed and value (a fraction < 1 or a disk count) the
// features are learned once on the holdout training set and the histogram,
// boost and hash methods are evaluated on the rest; ITQ codes are clamped to
// what the training set supports and the row's method names the length used. bits: one holdout per
// seed, features and boosting trained once, then one embedder per value.
// Each (value, seed) uses the seed for both the split and training, so values
// are compared on identical splits. Failures are recorded per row.
inline std::vector<SweepRow> run_sweep(const Dataset& ds, const TrainConfig& base, const SweepOptions& opt) {
  if (opt.values.empty()) throw StageError("sweep", "no sweep values given");
  if (opt.seeds.empty()) throw StageError("sweep", "no sweep seeds given");
  for (double v : opt.values) {
    if (opt.axis == SweepAxis::bits && !(v >= 1 && v == std::floor(v)))
      throw StageError("sweep", "bit counts must be positive integers");
    if (opt.axis == SweepAxis::train_size && !(v > 0 && (v < 1 || v == std::floor(v))))
      throw StageError("sweep", "training sizes must be fractions in (0, 1) or disk counts");
  }
  std::vector<SweepRow> rows;
  for (auto seed : opt.seeds) {
    TrainConfig cfg = base;
    cfg.seed = seed;
    if (opt.axis == SweepAxis::train_size) {
      for (double v : opt.values) {
        const std::array<Method, 3> methods{Method::histogram, Method::boost, Method::hash};
        std::array<SweepRow, 3> out;
        for (std::size_t k = 0; k < 3; ++k) {
          TrainConfig c = cfg;
          c.method = methods[k];
          out[k] = {v, method_label(c), seed};
        }
        try {
          const Split s = holdout_from_spec(ds, v, seed);
          const auto fs = train_features(ds, s.train, cfg);
          const auto test_feats = model_features(base_model(ds, fs, cfg), ds, s.test);
          for (std::size_t k = 0; k < 3; ++k) {
            try {
              TrainConfig c = cfg;
              c.method = methods[k];
              Model m = base_model(ds, fs, c);
              if (k == 0) train_histogram_stage(m, fs);
              else train_boost_stage(m, fs);
              if (k == 2) {
                train_hash_stage(m, fs, true);
                out[k].method = method_label(m.config);
              }
              out[k].accuracy = evaluate_features(m, ds, s.test, test_feats).accuracy();
            } catch (const std::exception& e) {
              out[k].status = detail::error_status(e);
            }
          }
        } catch (const std::exception& e) {
          for (auto& r : out) r.status = detail::error_status(e);
        }
        rows.insert(rows.end(), out.begin(), out.end());
      }
    } else {
      cfg.method = Method::hash;
      std::optional<Split> split;
      std::optional<FeatureStage> fs;
      std::optional<Model> boosted;
      std::vector<DiskFeatures> test_feats;
      std::string shared_error;
      try {
        split = holdout_from_spec(ds, opt.train_fraction, seed);
        fs = train_features(ds, split->train, cfg);
        boosted = base_model(ds, *fs, cfg);
        train_boost_stage(*boosted, *fs);
        test_feats = model_features(*boosted, ds, split->test);
      } catch (const std::exception& e) {
        shared_error = detail::error_status(e);
      }
      for (double v : opt.values) {
        TrainConfig c = cfg;
        c.bits = static_cast<int>(v);
        SweepRow row{v, method_label(c), seed};
        if (!shared_error.empty()) {
          row.status = shared_error;
        } else {
          try {
            Model m = *boosted;
            m.config = c;
            train_hash_stage(m, *fs);
            row.accuracy = evaluate_features(m, ds, split->test, test_feats).accuracy();
          } catch (const std::exception& e) {
            row.status = detail::error_status(e);
          }
        }
        rows.push_back(row);
      }
    }
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "value,method,seed,accuracy,status\n";
  for (const auto& r : rows)
    os << detail::format_double(r.value) << ',' << detail::csv_quote(r.method) << ',' << r.seed << ','
       << (std::isnan(r.accuracy) ? std::string() : detail::format_fixed(r.accuracy, 6)) << ','
       << detail::csv_quote(r.status) << '\n';
}

// Mean accuracy per (value, method) over the successful seeds, in first-seen order.
struct SweepMean {
  double value = 0;
  std::string method;
  double mean = std::numeric_limits<double>::quiet_NaN();
  int runs = 0;
};

inline std::vector<SweepMean> sweep_means(const std::vector<SweepRow>& rows) {
  std::vector<SweepMean> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](auto& m) { return m.value == r.value && m.method == r.method; });
    if (it == out.end()) {
      out.push_back({r.value, r.method, 0.0, 0});
      it = out.end() - 1;
    }
    if (!std::isnan(r.accuracy)) {
      it->mean = (it->mean * it->runs + r.accuracy) / (it->runs + 1);
      ++it->runs;
    }
  }
  for (auto& m : out)
    if (m.runs == 0) m.mean = std::numeric_limits<double>::quiet_NaN();
  return out;
}

}  // namespace refhash
