#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "refhash/common.hpp"

namespace refhash {

enum class HashMethod { lsh, sklsh, itq };

inline std::string to_string(HashMethod m) {
  switch (m) {
    case HashMethod::lsh: return "lsh";
    case HashMethod::sklsh: return "sklsh";
    case HashMethod::itq: return "itq";
  }
  return "?";
}

inline HashMethod parse_hash_method(const std::string& s) {
  if (s == "lsh") return HashMethod::lsh;
  if (s == "sklsh") return HashMethod::sklsh;
  if (s == "itq") return HashMethod::itq;
  throw std::invalid_argument("unknown embedder '" + s + "' (expected lsh, sklsh or itq)");
}

// Packed bit string; bit j lives in words[j / 64] at position j % 64.
struct BinaryCode {
  int bits = 0;
  std::vector<std::uint64_t> words;

  explicit BinaryCode(int nbits = 0)
      : bits(nbits), words(static_cast<std::size_t>((nbits + 63) / 64), 0) {}

  bool bit(int j) const { return (words[static_cast<std::size_t>(j / 64)] >> (j % 64)) & 1; }
  void set(int j) { words[static_cast<std::size_t>(j / 64)] |= std::uint64_t{1} << (j % 64); }

  // Two hex digits per byte, byte 0 (bits 0-7, bit 0 least significant) first.
  std::string to_hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (int byte = 0; byte < (bits + 7) / 8; ++byte) {
      const auto v = static_cast<unsigned>((words[static_cast<std::size_t>(byte / 8)] >> (8 * (byte % 8))) & 0xff);
      out += digits[v >> 4];
      out += digits[v & 0xf];
    }
    return out;
  }

  friend bool operator==(const BinaryCode&, const BinaryCode&) = default;
};

inline int hamming_distance(const BinaryCode& a, const BinaryCode& b) {
  if (a.bits != b.bits) throw std::invalid_argument("hamming_distance: code lengths differ");
  int d = 0;
  for (std::size_t i = 0; i < a.words.size(); ++i) d += std::popcount(a.words[i] ^ b.words[i]);
  return d;
}

// Per-dimension standardization fitted on training features.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& X) {
    Standardizer s;
    s.mean = X.colwise().mean().transpose();
    s.scale = ((X.rowwise() - s.mean.transpose()).array().square().colwise().mean()).sqrt().transpose();
    for (Eigen::Index j = 0; j < s.scale.size(); ++j)
      if (!(s.scale[j] > 1e-12)) s.scale[j] = 1.0;
    return s;
  }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    return ((x - mean).array() / scale.array()).matrix();
  }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const {
    return ((X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array()).matrix();
  }
};

struct BinaryEmbedder {
  HashMethod method = HashMethod::itq;
  int bits = 0;
  int dim = 0;
  std::uint64_t seed = 0;
  // lsh: bits x dim unit directions. sklsh: bits x dim frequencies.
  // itq: dim x bits principal directions.
  Eigen::MatrixXd projection;
  Eigen::VectorXd phase;   // sklsh
  Eigen::VectorXd offset;  // sklsh quantizer thresholds in [-1, 1]
  double bandwidth = 0;    // sklsh
  Eigen::VectorXd mean;    // itq
  Eigen::MatrixXd rotation;  // itq, bits x bits orthogonal
  std::vector<double> itq_loss;  // ||B - V R||_F^2 per iteration
};

namespace detail {

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = g(rng);
  return m;
}

inline Eigen::MatrixXd sign_matrix(const Eigen::MatrixXd& m) {
  return m.unaryExpr([](double v) { return v >= 0 ? 1.0 : -1.0; });
}

// Median Euclidean distance over all pairs of up to 1000 sampled rows.
inline double median_pairwise_distance(const Eigen::MatrixXd& X, std::mt19937_64& rng) {
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(X.rows()));
  std::iota(rows.begin(), rows.end(), 0);
  if (rows.size() > 1000) {
    for (std::size_t i = 0; i < 1000; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, rows.size() - 1);
      std::swap(rows[i], rows[pick(rng)]);
    }
    rows.resize(1000);
  }
  std::vector<double> d;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) d.push_back((X.row(rows[i]) - X.row(rows[j])).norm());
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

}  // namespace detail

// Trains an embedder on N x D features (one sample per row).
//  lsh   - bits random unit hyperplanes through the origin.
//  sklsh - random Fourier features of a Gaussian kernel whose bandwidth is
//          the inverse median pairwise distance, thresholded at random offsets.
//  itq   - PCA to `bits` dimensions, then alternately binarize and solve the
//          orthogonal Procrustes problem for the rotation.
inline BinaryEmbedder train_embedder(HashMethod method, const Eigen::MatrixXd& X, int bits,
                                     std::uint64_t seed, int itq_iters = 50) {
  const Eigen::Index N = X.rows(), D = X.cols();
  if (N < 2) throw std::invalid_argument("train_embedder: need at least 2 samples");
  if (D < 1) throw std::invalid_argument("train_embedder: empty feature dimension");
  if (bits < 1) throw std::invalid_argument("train_embedder: bits must be positive");

  BinaryEmbedder e;
  e.method = method;
  e.bits = bits;
  e.dim = static_cast<int>(D);
  e.seed = seed;
  std::mt19937_64 rng(seed);

  switch (method) {
    case HashMethod::lsh: {
      e.projection = detail::gaussian_matrix(bits, D, rng);
      e.projection.rowwise().normalize();
      break;
    }
    case HashMethod::sklsh: {
      const double med = detail::median_pairwise_distance(X, rng);
      if (!(med > 0)) throw std::invalid_argument("train_embedder: degenerate data (zero median distance)");
      e.bandwidth = 1.0 / med;
      e.projection = detail::gaussian_matrix(bits, D, rng) * e.bandwidth;
      std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi), unit(-1.0, 1.0);
      e.phase.resize(bits);
      e.offset.resize(bits);
      for (int j = 0; j < bits; ++j) e.phase[j] = phase(rng);
      for (int j = 0; j < bits; ++j) e.offset[j] = unit(rng);
      break;
    }
    case HashMethod::itq: {
      if (bits > D) throw std::invalid_argument("train_embedder: itq needs bits <= feature dimension (" +
                                                std::to_string(bits) + " > " + std::to_string(D) + ")");
      if (bits > N - 1)
        throw std::invalid_argument("train_embedder: itq needs bits <= samples - 1 (" + std::to_string(bits) +
                                    " > " + std::to_string(N - 1) + ")");
      e.mean = X.colwise().mean().transpose();
      const Eigen::MatrixXd Xc = X.rowwise() - e.mean.transpose();
      const Eigen::MatrixXd cov = Xc.transpose() * Xc;
      if (!(cov.trace() > 0)) throw std::invalid_argument("train_embedder: degenerate data (zero variance)");
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
      e.projection.resize(D, bits);
      for (int j = 0; j < bits; ++j) {
        Eigen::VectorXd v = eig.eigenvectors().col(D - 1 - j);
        Eigen::Index arg;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0) v = -v;  // pin the sign
        e.projection.col(j) = v;
      }
      const Eigen::MatrixXd V = Xc * e.projection;
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(detail::gaussian_matrix(bits, bits, rng));
      e.rotation = qr.householderQ() * Eigen::MatrixXd::Identity(bits, bits);
      for (int it = 0; it < itq_iters; ++it) {
        const Eigen::MatrixXd B = detail::sign_matrix(V * e.rotation);
        e.itq_loss.push_back((B - V * e.rotation).squaredNorm());
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(V.transpose() * B, Eigen::ComputeFullU | Eigen::ComputeFullV);
        e.rotation = svd.matrixU() * svd.matrixV().transpose();
      }
      const Eigen::MatrixXd B = detail::sign_matrix(V * e.rotation);
      e.itq_loss.push_back((B - V * e.rotation).squaredNorm());
      break;
    }
  }
  return e;
}

// Projection values whose signs are the code bits (sign(0) -> 1).
inline Eigen::VectorXd embed_projections(const BinaryEmbedder& e, const Eigen::VectorXd& x) {
  if (x.size() != e.dim)
    throw std::invalid_argument("encode: feature dimension " + std::to_string(x.size()) +
                                " does not match embedder dimension " + std::to_string(e.dim));
  switch (e.method) {
    case HashMethod::lsh: return e.projection * x;
    case HashMethod::sklsh: {
      Eigen::VectorXd p = e.projection * x + e.phase;
      return (p.array().cos() - e.offset.array()).matrix();
    }
    case HashMethod::itq: return e.rotation.transpose() * (e.projection.transpose() * (x - e.mean));
  }
  return {};
}

inline BinaryCode encode(const BinaryEmbedder& e, const Eigen::VectorXd& x) {
  const Eigen::VectorXd p = embed_projections(e, x);
  BinaryCode code(e.bits);
  for (int j = 0; j < e.bits; ++j)
    if (p[j] >= 0) code.set(j);
  return code;
}

struct CodeEntry {
  BinaryCode code;
  int label = 0;
  std::int64_t disk_id = 0;
};

struct CodeDatabase {
  std::vector<CodeEntry> entries;

  void add(BinaryCode code, int label, std::int64_t disk_id) {
    if (!entries.empty() && code.bits != entries.front().code.bits)
      throw std::invalid_argument("CodeDatabase: all codes must have the same length");
    entries.push_back({std::move(code), label, disk_id});
  }
  std::size_t size() const { return entries.size(); }
};

struct Neighbor {
  std::size_t index = 0;  // position in the database
  double distance = 0;
  int label = 0;
  std::int64_t disk_id = 0;
};

struct KnnResult {
  int label = 0;
  std::vector<Neighbor> neighbors;  // nearest first
};

// Majority label among ranked neighbours; a tie goes to the tied label that
// appears first in rank order (the nearest neighbour's label when it is tied).
inline int majority_vote(std::span<const Neighbor> ranked) {
  if (ranked.empty()) throw std::invalid_argument("majority_vote: no neighbours");
  std::vector<std::pair<int, int>> counts;  // (label, votes) in first-appearance order
  for (const auto& n : ranked) {
    auto it = std::find_if(counts.begin(), counts.end(), [&](auto& p) { return p.first == n.label; });
    if (it == counts.end()) counts.emplace_back(n.label, 1);
    else ++it->second;
  }
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it)
    if (it->second > best->second) best = it;
  return best->first;
}

namespace detail {
inline KnnResult rank_and_vote(std::vector<Neighbor> all, int k) {
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(kk), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      return a.distance < b.distance || (a.distance == b.distance && a.disk_id < b.disk_id);
                    });
  all.resize(kk);
  KnnResult r;
  r.label = majority_vote(all);
  r.neighbors = std::move(all);
  return r;
}
}  // namespace detail

// Exact k-nearest neighbours by Hamming distance (linear scan, popcount of
// xor). Distance ties go to the smaller disk id.
inline KnnResult hamming_knn(const BinaryCode& query, const CodeDatabase& db, int k = 10) {
  if (db.entries.empty()) throw std::invalid_argument("hamming_knn: empty database");
  if (k < 1) throw std::invalid_argument("hamming_knn: k must be positive");
  std::vector<Neighbor> all(db.size());
  for (std::size_t i = 0; i < db.size(); ++i) {
    const auto& e = db.entries[i];
    all[i] = {i, static_cast<double>(hamming_distance(query, e.code)), e.label, e.disk_id};
  }
  return detail::rank_and_vote(std::move(all), k);
}

// Euclidean kNN over raw feature rows; same ranking and voting rules.
inline KnnResult euclidean_knn(const Eigen::VectorXd& query, const Eigen::MatrixXd& X,
                               std::span<const int> labels, std::span<const std::int64_t> ids, int k = 10) {
  if (X.rows() == 0) throw std::invalid_argument("euclidean_knn: empty database");
  if (k < 1) throw std::invalid_argument("euclidean_knn: k must be positive");
  std::vector<Neighbor> all(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto iu = static_cast<std::size_t>(i);
    all[iu] = {iu, (X.row(i).transpose() - query).squaredNorm(), labels[iu], ids[iu]};
  }
  return detail::rank_and_vote(std::move(all), k);
}

}  // namespace refhash
