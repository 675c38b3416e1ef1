#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "refhash/common.hpp"

namespace refhash {

inline constexpr int kManifestVersion = 1;

struct ManifestRow {
  std::string path;  // relative to the manifest directory
  std::string label;
  int instance = 0;
  double illum_angle_deg = 0.0;
  std::string exposure = "default";

  friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

// Dataset catalog. On disk this is a UTF-8 CSV:
//
//   # refhash-manifest v1
//   path,class,instance,illum_angle_deg,exposure
//   felt/felt_000.png,felt,0,-10,default
//
// `path` and `class` are required; the remaining columns default when absent.
// Unknown columns are ignored with a warning.
struct Manifest {
  int version = kManifestVersion;
  std::filesystem::path base_dir;
  std::vector<ManifestRow> rows;
  std::vector<std::string> warnings;

  // Sorted unique class labels.
  std::vector<std::string> classes() const {
    std::set<std::string> s;
    for (const auto& r : rows) s.insert(r.label);
    return {s.begin(), s.end()};
  }
  std::filesystem::path resolve(const ManifestRow& row) const { return base_dir / row.path; }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("manifest", "cannot write manifest: " + path.string());
  out << "# refhash-manifest v" << kManifestVersion << "\n";
  out << "path,class,instance,illum_angle_deg,exposure\n";
  for (const auto& r : m.rows) {
    out << detail::csv_quote(r.path) << ',' << detail::csv_quote(r.label) << ',' << r.instance
        << ',' << detail::format_double(r.illum_angle_deg) << ','
        << detail::csv_quote(r.exposure) << '\n';
  }
  if (!out) throw StageError("manifest", "write failed: " + path.string());
}

// Parses and validates a manifest. Every referenced image must exist.
inline Manifest load_manifest(const std::filesystem::path& path, bool check_files = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("manifest", "cannot open manifest: " + path.string());

  Manifest m;
  m.base_dir = path.parent_path();
  std::vector<std::pair<int, std::string>> lines;
  {
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      line = detail::trim(line);
      if (!line.empty()) lines.emplace_back(line_no, std::move(line));
    }
  }
  if (lines.empty()) throw StageError("manifest", path.string() + ": empty manifest");

  const std::string tag = "# refhash-manifest v";
  if (lines[0].second.rfind(tag, 0) != 0)
    throw StageError("manifest", path.string() + ": missing '# refhash-manifest v<N>' header");
  try {
    m.version = std::stoi(lines[0].second.substr(tag.size()));
  } catch (const std::exception&) {
    throw StageError("manifest", path.string() + ": malformed version header");
  }
  if (m.version != kManifestVersion)
    throw StageError("manifest",
                     path.string() + ": unsupported manifest version " + std::to_string(m.version));

  std::size_t next = 1;
  while (next < lines.size() && lines[next].second[0] == '#') ++next;
  if (next == lines.size()) throw StageError("manifest", path.string() + ": missing column header");
  std::vector<std::string> columns;
  for (auto& c : detail::csv_split(lines[next].second)) columns.push_back(detail::trim(c));
  ++next;

  static const std::unordered_set<std::string> known = {"path", "class", "instance",
                                                        "illum_angle_deg", "exposure"};
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (!known.count(columns[i]))
      m.warnings.push_back("ignoring unknown column '" + columns[i] + "'");
    else
      col[columns[i]] = i;
  }
  if (!col.count("path") || !col.count("class"))
    throw StageError("manifest", path.string() + ": columns 'path' and 'class' are required");

  std::unordered_set<std::string> seen;
  for (; next < lines.size(); ++next) {
    const auto& [line_no, text] = lines[next];
    if (text[0] == '#') continue;
    auto f = detail::csv_split(text);
    auto get = [&](const char* name) -> std::string {
      auto it = col.find(name);
      if (it == col.end() || it->second >= f.size()) return {};
      return detail::trim(f[it->second]);
    };
    const std::string where = path.string() + ":" + std::to_string(line_no);
    ManifestRow r;
    r.path = get("path");
    r.label = get("class");
    if (r.path.empty() || r.label.empty())
      throw StageError("manifest", where + ": empty path or class");
    try {
      if (auto s = get("instance"); !s.empty()) r.instance = std::stoi(s);
      if (auto s = get("illum_angle_deg"); !s.empty()) r.illum_angle_deg = std::stod(s);
    } catch (const std::exception&) {
      throw StageError("manifest", where + ": malformed numeric field");
    }
    if (auto s = get("exposure"); !s.empty()) r.exposure = s;
    if (!seen.insert(r.path).second)
      throw StageError("manifest", where + ": duplicate row for path '" + r.path + "'");
    if (check_files && !std::filesystem::exists(m.base_dir / r.path))
      throw StageError("manifest", where + ": missing image file '" + r.path + "'");
    m.rows.push_back(std::move(r));
  }
  return m;
}

}  // namespace refhash
