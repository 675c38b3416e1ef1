#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "refhash/binhash.hpp"
#include "refhash/common.hpp"
#include "refhash/filterbank.hpp"
#include "refhash/jointboost.hpp"
#include "refhash/layout.hpp"
#include "refhash/texton.hpp"

namespace refhash {

enum class Method { histogram, boost, hash };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::histogram: return "histogram";
    case Method::boost: return "boost";
    case Method::hash: return "hash";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "histogram") return Method::histogram;
  if (s == "boost") return Method::boost;
  if (s == "hash") return Method::hash;
  throw std::invalid_argument("unknown method '" + s + "' (expected histogram, boost or hash)");
}

struct TrainConfig {
  Method method = Method::hash;
  HashMethod embedder = HashMethod::itq;
  int bits = 64;
  int textons = 512;
  int regions = 200;
  int rounds = 700;
  double tau = 0.01;
  std::uint64_t seed = 0;
  int knn = 10;
  std::uint64_t kmeans_samples = 200000;
  int kmeans_iters = 100;
  double kmeans_tol = 1e-6;
  int itq_iters = 50;
  bool normalize = true;
  double min_side = 0.05;
  double max_side = 0.9;
  std::array<double, 4> scales = kDefaultScales;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Training-set entries kept for the histogram baseline.
struct HistogramEntry {
  std::vector<double> histogram;
  int label = 0;
  std::int64_t disk_id = 0;
};

struct Model {
  TrainConfig config;
  std::vector<std::string> classes;
  std::vector<std::string> training;  // manifest paths of the training disks
  FilterBank bank;
  TextonDictionary dictionary;
  RegionSet regions;
  StrongClassifier classifier;   // boost, hash
  std::vector<FeaturePair> pairs;  // hash
  Standardizer standardizer;     // hash
  BinaryEmbedder embedder;       // hash
  CodeDatabase database;         // hash
  std::vector<HistogramEntry> histograms;  // histogram
  BoostLog boost_log;
};

inline constexpr int kModelVersion = 1;
inline constexpr const char* kModelMagic = "REFHASH-MODEL";

// Section order in the file. Unused sections are present with zero values.
inline constexpr std::array<const char*, 10> kModelSections{
    "filterbank", "dictionary", "regions",   "classifier", "pairs",
    "standardizer", "embedder", "database", "histograms", "boostlog"};

namespace detail {

inline double lo32(std::uint64_t v) { return static_cast<double>(v & 0xffffffffULL); }
inline double hi32(std::uint64_t v) { return static_cast<double>(v >> 32); }

struct SectionWriter {
  std::vector<double> v;
  void put(double x) { v.push_back(x); }
  void put_u64(std::uint64_t x) {
    put(lo32(x));
    put(hi32(x));
  }
  void put_all(std::span<const double> xs) {
    put(static_cast<double>(xs.size()));
    v.insert(v.end(), xs.begin(), xs.end());
  }
  void put_vec(const Eigen::VectorXd& x) { put_all({x.data(), static_cast<std::size_t>(x.size())}); }
  void put_mat(const Eigen::MatrixXd& m) {
    put(static_cast<double>(m.rows()));
    put(static_cast<double>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) put(m(i, j));
  }
};

struct SectionReader {
  std::string name;
  std::span<const double> v;
  std::size_t pos = 0;

  double get() {
    if (pos >= v.size()) throw StageError("model", "section '" + name + "' is truncated");
    return v[pos++];
  }
  std::int64_t get_int() {
    const double x = get();
    if (x != std::floor(x) || std::abs(x) > 9007199254740992.0)
      throw StageError("model", "section '" + name + "' holds a non-integer count");
    return static_cast<std::int64_t>(x);
  }
  std::size_t get_count(std::size_t max = std::size_t{1} << 40) {
    const auto n = get_int();
    if (n < 0 || static_cast<std::size_t>(n) > max)
      throw StageError("model", "section '" + name + "' holds an invalid count");
    return static_cast<std::size_t>(n);
  }
  std::uint64_t get_u64() {
    const auto lo = static_cast<std::uint64_t>(get_int());
    const auto hi = static_cast<std::uint64_t>(get_int());
    return lo | hi << 32;
  }
  std::vector<double> get_all() {
    const std::size_t n = get_count();
    if (n > v.size() - pos) throw StageError("model", "section '" + name + "' is truncated");
    std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(pos),
                            v.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return out;
  }
  Eigen::VectorXd get_vec() {
    const auto a = get_all();
    return Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
  }
  Eigen::MatrixXd get_mat() {
    const auto r = static_cast<Eigen::Index>(get_count()), c = static_cast<Eigen::Index>(get_count());
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = get();
    return m;
  }
  void finish() const {
    if (pos != v.size()) throw StageError("model", "section '" + name + "' has trailing values");
  }
};

inline std::vector<double> encode_filterbank(const FilterBank& b) {
  SectionWriter w;
  for (double s : b.scales) w.put(s);
  w.put(static_cast<double>(b.kernels.size()));
  for (const auto& k : b.kernels) {
    w.put(static_cast<double>(static_cast<int>(k.kind)));
    w.put(k.scale);
    w.put(k.orientation_deg);
    w.put(k.half);
    w.put_all(k.weights);
  }
  return w.v;
}

inline FilterBank decode_filterbank(SectionReader& r) {
  FilterBank b;
  for (double& s : b.scales) s = r.get();
  const std::size_t n = r.get_count(kNumFilters);
  for (std::size_t i = 0; i < n; ++i) {
    FilterKernel k;
    const auto kind = r.get_int();
    if (kind < 0 || kind > 2) throw StageError("model", "unknown filter kind");
    k.kind = static_cast<FilterKind>(kind);
    k.scale = r.get();
    k.orientation_deg = r.get();
    k.half = static_cast<int>(r.get_int());
    k.weights = r.get_all();
    if (k.half < 0 || k.weights.size() != static_cast<std::size_t>(k.side() * k.side()))
      throw StageError("model", "filter kernel size does not match its half-width");
    b.kernels.push_back(std::move(k));
  }
  return b;
}

inline std::vector<double> encode_dictionary(const TextonDictionary& d) {
  SectionWriter w;
  if (d.K == 0) return w.v;
  w.put(d.K);
  w.put(d.objective);
  w.put_all(d.objective_history);
  w.put_all(d.mean);
  w.put_all(d.scale);
  w.put_all(d.centers);
  return w.v;
}

inline TextonDictionary decode_dictionary(SectionReader& r) {
  TextonDictionary d;
  if (r.v.empty()) return d;
  d.K = static_cast<int>(r.get_int());
  d.objective = r.get();
  d.objective_history = r.get_all();
  d.mean = r.get_all();
  d.scale = r.get_all();
  d.centers = r.get_all();
  if (d.K < 0 || d.mean.size() != kDims || d.scale.size() != kDims ||
      d.centers.size() != static_cast<std::size_t>(d.K) * kDims)
    throw StageError("model", "texton dictionary has inconsistent sizes");
  return d;
}

inline std::vector<double> encode_regions(const RegionSet& s) {
  SectionWriter w;
  if (s.regions.empty()) return w.v;
  w.put_u64(s.seed);
  w.put(static_cast<double>(s.regions.size()));
  for (const auto& g : s.regions) {
    w.put(g.x0);
    w.put(g.y0);
    w.put(g.x1);
    w.put(g.y1);
  }
  return w.v;
}

inline RegionSet decode_regions(SectionReader& r) {
  RegionSet s;
  if (r.v.empty()) return s;
  s.seed = r.get_u64();
  const std::size_t n = r.get_count();
  for (std::size_t i = 0; i < n; ++i) {
    Region g;
    g.x0 = r.get();
    g.y0 = r.get();
    g.x1 = r.get();
    g.y1 = r.get();
    s.regions.push_back(g);
  }
  return s;
}

inline std::vector<double> encode_classifier(const StrongClassifier& h) {
  SectionWriter w;
  if (h.learners.empty()) return w.v;
  w.put(h.R);
  w.put(h.K);
  w.put(static_cast<double>(h.learners.size()));
  for (const auto& l : h.learners) {
    w.put(l.region);
    w.put(l.texton);
    w.put(l.threshold);
    w.put(l.a);
    w.put(l.b);
    w.put_u64(l.shared);
    w.put_all(l.k);
  }
  return w.v;
}

inline StrongClassifier decode_classifier(SectionReader& r, const std::vector<std::string>& classes) {
  StrongClassifier h;
  h.classes = classes;
  if (r.v.empty()) return h;
  h.R = static_cast<int>(r.get_int());
  h.K = static_cast<int>(r.get_int());
  const std::size_t n = r.get_count();
  for (std::size_t i = 0; i < n; ++i) {
    WeakLearner l;
    l.region = static_cast<int>(r.get_int());
    l.texton = static_cast<int>(r.get_int());
    l.threshold = r.get();
    l.a = r.get();
    l.b = r.get();
    l.shared = r.get_u64();
    l.k = r.get_all();
    if (l.region < 0 || l.region >= h.R || l.texton < 0 || l.texton >= h.K || l.k.size() != classes.size())
      throw StageError("model", "weak learner " + std::to_string(i) + " is inconsistent with the classifier");
    h.learners.push_back(std::move(l));
  }
  return h;
}

inline std::vector<double> encode_pairs(const std::vector<FeaturePair>& pairs) {
  SectionWriter w;
  if (pairs.empty()) return w.v;
  w.put(static_cast<double>(pairs.size()));
  for (const auto& p : pairs) {
    w.put(p.region);
    w.put(p.texton);
  }
  return w.v;
}

inline std::vector<FeaturePair> decode_pairs(SectionReader& r) {
  std::vector<FeaturePair> out;
  if (r.v.empty()) return out;
  const std::size_t n = r.get_count();
  for (std::size_t i = 0; i < n; ++i) {
    FeaturePair p;
    p.region = static_cast<int>(r.get_int());
    p.texton = static_cast<int>(r.get_int());
    out.push_back(p);
  }
  return out;
}

inline std::vector<double> encode_standardizer(const Standardizer& s) {
  SectionWriter w;
  if (s.mean.size() == 0) return w.v;
  w.put_vec(s.mean);
  w.put_vec(s.scale);
  return w.v;
}

inline Standardizer decode_standardizer(SectionReader& r) {
  Standardizer s;
  if (r.v.empty()) return s;
  s.mean = r.get_vec();
  s.scale = r.get_vec();
  return s;
}

inline std::vector<double> encode_embedder(const BinaryEmbedder& e) {
  SectionWriter w;
  if (e.bits == 0) return w.v;
  w.put(static_cast<double>(static_cast<int>(e.method)));
  w.put(e.bits);
  w.put(e.dim);
  w.put_u64(e.seed);
  w.put(e.bandwidth);
  w.put_mat(e.projection);
  w.put_vec(e.phase);
  w.put_vec(e.offset);
  w.put_vec(e.mean);
  w.put_mat(e.rotation);
  w.put_all(e.itq_loss);
  return w.v;
}

inline BinaryEmbedder decode_embedder(SectionReader& r) {
  BinaryEmbedder e;
  if (r.v.empty()) return e;
  const auto m = r.get_int();
  if (m < 0 || m > 2) throw StageError("model", "unknown embedder method");
  e.method = static_cast<HashMethod>(m);
  e.bits = static_cast<int>(r.get_int());
  e.dim = static_cast<int>(r.get_int());
  e.seed = r.get_u64();
  e.bandwidth = r.get();
  e.projection = r.get_mat();
  e.phase = r.get_vec();
  e.offset = r.get_vec();
  e.mean = r.get_vec();
  e.rotation = r.get_mat();
  e.itq_loss = r.get_all();
  return e;
}

inline std::vector<double> encode_database(const CodeDatabase& db) {
  SectionWriter w;
  if (db.entries.empty()) return w.v;
  w.put(static_cast<double>(db.size()));
  w.put(db.entries.front().code.bits);
  for (const auto& e : db.entries) {
    w.put(e.label);
    w.put(static_cast<double>(e.disk_id));
    for (auto word : e.code.words) w.put_u64(word);
  }
  return w.v;
}

inline CodeDatabase decode_database(SectionReader& r) {
  CodeDatabase db;
  if (r.v.empty()) return db;
  const std::size_t n = r.get_count();
  const int bits = static_cast<int>(r.get_int());
  if (bits < 1) throw StageError("model", "code database has an invalid bit count");
  for (std::size_t i = 0; i < n; ++i) {
    CodeEntry e;
    e.label = static_cast<int>(r.get_int());
    e.disk_id = r.get_int();
    e.code = BinaryCode(bits);
    for (auto& word : e.code.words) word = r.get_u64();
    db.entries.push_back(std::move(e));
  }
  return db;
}

inline std::vector<double> encode_histograms(const std::vector<HistogramEntry>& hs) {
  SectionWriter w;
  if (hs.empty()) return w.v;
  w.put(static_cast<double>(hs.size()));
  for (const auto& h : hs) {
    w.put(h.label);
    w.put(static_cast<double>(h.disk_id));
    w.put_all(h.histogram);
  }
  return w.v;
}

inline std::vector<HistogramEntry> decode_histograms(SectionReader& r) {
  std::vector<HistogramEntry> out;
  if (r.v.empty()) return out;
  const std::size_t n = r.get_count();
  for (std::size_t i = 0; i < n; ++i) {
    HistogramEntry h;
    h.label = static_cast<int>(r.get_int());
    h.disk_id = r.get_int();
    h.histogram = r.get_all();
    out.push_back(std::move(h));
  }
  return out;
}

inline std::vector<double> encode_boostlog(const BoostLog& log) {
  SectionWriter w;
  if (log.exp_loss.empty()) return w.v;
  w.put_all(log.exp_loss);
  w.put_all(log.wse);
  std::vector<double> sub(log.subsets_evaluated.begin(), log.subsets_evaluated.end());
  w.put_all(sub);
  return w.v;
}

inline BoostLog decode_boostlog(SectionReader& r) {
  BoostLog log;
  if (r.v.empty()) return log;
  log.exp_loss = r.get_all();
  log.wse = r.get_all();
  for (double v : r.get_all()) log.subsets_evaluated.push_back(static_cast<int>(v));
  return log;
}

inline std::uint64_t section_hash(const std::vector<double>& values) {
  Fnv1a h;
  h.update(values);
  return h.digest();
}

inline nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"method", to_string(c.method)},
          {"embedder", to_string(c.embedder)},
          {"bits", c.bits},
          {"textons", c.textons},
          {"regions", c.regions},
          {"rounds", c.rounds},
          {"tau", c.tau},
          {"seed", c.seed},
          {"knn", c.knn},
          {"kmeans_samples", c.kmeans_samples},
          {"kmeans_iters", c.kmeans_iters},
          {"kmeans_tol", c.kmeans_tol},
          {"itq_iters", c.itq_iters},
          {"normalize", c.normalize},
          {"min_side", c.min_side},
          {"max_side", c.max_side},
          {"scales", c.scales}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.method = parse_method(j.at("method").get<std::string>());
  c.embedder = parse_hash_method(j.at("embedder").get<std::string>());
  c.bits = j.at("bits").get<int>();
  c.textons = j.at("textons").get<int>();
  c.regions = j.at("regions").get<int>();
  c.rounds = j.at("rounds").get<int>();
  c.tau = j.at("tau").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.knn = j.at("knn").get<int>();
  c.kmeans_samples = j.at("kmeans_samples").get<std::uint64_t>();
  c.kmeans_iters = j.at("kmeans_iters").get<int>();
  c.kmeans_tol = j.at("kmeans_tol").get<double>();
  c.itq_iters = j.at("itq_iters").get<int>();
  c.normalize = j.at("normalize").get<bool>();
  c.min_side = j.at("min_side").get<double>();
  c.max_side = j.at("max_side").get<double>();
  c.scales = j.at("scales").get<std::array<double, 4>>();
  return c;
}

inline void append_le(std::string& out, const std::vector<double>& values) {
  out.reserve(out.size() + 8 + 8 * values.size());
  auto put64 = [&](std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>(v >> (8 * k)));
  };
  put64(values.size());
  for (double v : values) put64(std::bit_cast<std::uint64_t>(v));
}

inline std::uint64_t read_le64(const std::string& buf, std::size_t at) {
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[at + static_cast<std::size_t>(k)])) << (8 * k);
  return v;
}

}  // namespace detail

// File layout:
//   line 1  "REFHASH-MODEL 1"
//   line 2  one-line JSON header: config, classes, training paths, section
//           directory (byte offset after the header, value count, FNV-1a hash)
//           and cross-pins between components
//   body    per section in kModelSections order: u64 count, then count
//           little-endian f64 values
inline std::string serialize_model(const Model& m) {
  std::array<std::vector<double>, kModelSections.size()> sec{
      detail::encode_filterbank(m.bank),       detail::encode_dictionary(m.dictionary),
      detail::encode_regions(m.regions),       detail::encode_classifier(m.classifier),
      detail::encode_pairs(m.pairs),           detail::encode_standardizer(m.standardizer),
      detail::encode_embedder(m.embedder),     detail::encode_database(m.database),
      detail::encode_histograms(m.histograms), detail::encode_boostlog(m.boost_log)};

  nlohmann::json dir = nlohmann::json::object();
  std::string body;
  std::array<std::string, kModelSections.size()> hashes;
  for (std::size_t i = 0; i < sec.size(); ++i) {
    hashes[i] = to_hex(detail::section_hash(sec[i]));
    dir[kModelSections[i]] = {{"offset", body.size()}, {"count", sec[i].size()}, {"fnv1a", hashes[i]}};
    detail::append_le(body, sec[i]);
  }
  nlohmann::json pins = {
      {"classifier", {{"filterbank", hashes[0]}, {"dictionary", hashes[1]}, {"regions", hashes[2]}}},
      {"embedder", {{"classifier", hashes[3]}, {"pairs", hashes[4]}, {"standardizer", hashes[5]}}},
      {"database", {{"embedder", hashes[6]}}},
      {"histograms", {{"filterbank", hashes[0]}, {"dictionary", hashes[1]}}}};
  nlohmann::json header = {{"config", detail::config_to_json(m.config)},
                           {"classes", m.classes},
                           {"training", m.training},
                           {"sections", dir},
                           {"pins", pins}};
  return std::string(kModelMagic) + " " + std::to_string(kModelVersion) + "\n" + header.dump() + "\n" + body;
}

inline Model deserialize_model(const std::string& bytes) {
  const auto nl1 = bytes.find('\n');
  if (nl1 == std::string::npos || bytes.compare(0, nl1, std::string(kModelMagic) + " " +
                                                             std::to_string(kModelVersion)) != 0)
    throw StageError("model", "not a version " + std::to_string(kModelVersion) + " model file");
  const auto nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string::npos) throw StageError("model", "model header is truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(nl1 + 1),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(nl2));
  } catch (const nlohmann::json::exception& e) {
    throw StageError("model", std::string("model header is not valid JSON: ") + e.what());
  }

  const std::size_t base = nl2 + 1;
  std::array<std::vector<double>, kModelSections.size()> sec;
  std::array<std::string, kModelSections.size()> hashes;
  Model m;
  try {
    m.config = detail::config_from_json(header.at("config"));
    m.classes = header.at("classes").get<std::vector<std::string>>();
    m.training = header.at("training").get<std::vector<std::string>>();
    std::size_t expect = 0;
    for (std::size_t i = 0; i < sec.size(); ++i) {
      const auto& d = header.at("sections").at(kModelSections[i]);
      const auto offset = d.at("offset").get<std::size_t>();
      const auto count = d.at("count").get<std::size_t>();
      if (offset != expect || base + offset + 8 + 8 * count > bytes.size() ||
          detail::read_le64(bytes, base + offset) != count)
        throw StageError("model", std::string("section '") + kModelSections[i] + "' is misplaced or truncated");
      sec[i].resize(count);
      for (std::size_t k = 0; k < count; ++k)
        sec[i][k] = std::bit_cast<double>(detail::read_le64(bytes, base + offset + 8 + 8 * k));
      hashes[i] = to_hex(detail::section_hash(sec[i]));
      if (hashes[i] != d.at("fnv1a").get<std::string>())
        throw StageError("model", std::string("section '") + kModelSections[i] + "' fails its checksum");
      expect = offset + 8 + 8 * count;
    }
    if (base + expect != bytes.size()) throw StageError("model", "trailing bytes after the last section");

    const auto& pins = header.at("pins");
    auto check_pin = [&](const char* owner, const char* comp, std::size_t idx) {
      if (pins.at(owner).at(comp).get<std::string>() != hashes[idx])
        throw StageError("model", std::string(owner) + " was not trained with this " + comp);
    };
    check_pin("classifier", "filterbank", 0);
    check_pin("classifier", "dictionary", 1);
    check_pin("classifier", "regions", 2);
    check_pin("embedder", "classifier", 3);
    check_pin("embedder", "pairs", 4);
    check_pin("embedder", "standardizer", 5);
    check_pin("database", "embedder", 6);
    check_pin("histograms", "filterbank", 0);
    check_pin("histograms", "dictionary", 1);
  } catch (const nlohmann::json::exception& e) {
    throw StageError("model", std::string("malformed model header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw StageError("model", e.what());
  }

  auto reader = [&](std::size_t i) { return detail::SectionReader{kModelSections[i], sec[i]}; };
  auto run = [&](std::size_t i, auto&& fn) {
    auto r = reader(i);
    auto out = fn(r);
    r.finish();
    return out;
  };
  m.bank = run(0, [](auto& r) { return detail::decode_filterbank(r); });
  m.dictionary = run(1, [](auto& r) { return detail::decode_dictionary(r); });
  m.regions = run(2, [](auto& r) { return detail::decode_regions(r); });
  m.classifier = run(3, [&](auto& r) { return detail::decode_classifier(r, m.classes); });
  m.pairs = run(4, [](auto& r) { return detail::decode_pairs(r); });
  m.standardizer = run(5, [](auto& r) { return detail::decode_standardizer(r); });
  m.embedder = run(6, [](auto& r) { return detail::decode_embedder(r); });
  m.database = run(7, [](auto& r) { return detail::decode_database(r); });
  m.histograms = run(8, [](auto& r) { return detail::decode_histograms(r); });
  m.boost_log = run(9, [](auto& r) { return detail::decode_boostlog(r); });
  return m;
}

inline void save_model(const std::filesystem::path& path, const Model& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("model", "cannot write " + path.string());
  const std::string bytes = serialize_model(m);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw StageError("model", "failed writing " + path.string());
}

inline Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("model", "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace refhash
