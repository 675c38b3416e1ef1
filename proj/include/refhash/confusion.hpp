#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "refhash/manifest.hpp"

namespace refhash {

// counts(true, predicted); rows are true classes.
struct ConfusionMatrix {
  std::vector<std::string> classes;
  std::vector<std::int64_t> counts;  // C * C

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<std::string> names)
      : classes(std::move(names)), counts(classes.size() * classes.size(), 0) {}

  std::size_t size() const { return classes.size(); }
  std::int64_t operator()(std::size_t truth, std::size_t pred) const { return counts[truth * size() + pred]; }

  void add(int truth, int pred) {
    const auto C = static_cast<int>(size());
    if (truth < 0 || truth >= C || pred < 0 || pred >= C)
      throw std::out_of_range("confusion matrix index out of range");
    ++counts[static_cast<std::size_t>(truth) * size() + static_cast<std::size_t>(pred)];
  }

  std::int64_t row_total(std::size_t truth) const {
    std::int64_t s = 0;
    for (std::size_t p = 0; p < size(); ++p) s += (*this)(truth, p);
    return s;
  }
  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto v : counts) s += v;
    return s;
  }
  std::int64_t correct() const {
    std::int64_t s = 0;
    for (std::size_t c = 0; c < size(); ++c) s += (*this)(c, c);
    return s;
  }
  double accuracy() const {
    const auto n = total();
    return n == 0 ? 0.0 : static_cast<double>(correct()) / static_cast<double>(n);
  }
  // Row-normalized percentage; an empty row is all zeros.
  double row_percent(std::size_t truth, std::size_t pred) const {
    const auto n = row_total(truth);
    return n == 0 ? 0.0 : 100.0 * static_cast<double>((*this)(truth, pred)) / static_cast<double>(n);
  }
};

// Long-form CSV: one `count` row then one `percent` row per true class.
inline void write_confusion_csv(std::ostream& os, const ConfusionMatrix& m) {
  os << "kind,true";
  for (const auto& c : m.classes) os << ',' << detail::csv_quote(c);
  os << '\n';
  for (std::size_t t = 0; t < m.size(); ++t) {
    os << "count," << detail::csv_quote(m.classes[t]);
    for (std::size_t p = 0; p < m.size(); ++p) os << ',' << m(t, p);
    os << '\n';
  }
  for (std::size_t t = 0; t < m.size(); ++t) {
    os << "percent," << detail::csv_quote(m.classes[t]);
    for (std::size_t p = 0; p < m.size(); ++p) os << ',' << detail::format_fixed(m.row_percent(t, p), 4);
    os << '\n';
  }
}

}  // namespace refhash
