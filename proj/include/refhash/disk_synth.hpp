#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "refhash/common.hpp"
#include "refhash/manifest.hpp"
#include "refhash/png_io.hpp"

namespace refhash {

using Vec3 = std::array<double, 3>;

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  if (!(n > 0)) throw std::invalid_argument("cannot normalize a zero vector");
  return {a[0] / n, a[1] / n, a[2] / n};
}

// Parabolic mirror camera. The mirror surface is y + F = (x^2 + z^2) / 4F with
// the measured surface point at the focus (origin) and the optical axis along
// y. The surface normal points toward the mirror vertex, i.e. (0, -1, 0).
struct MirrorGeometry {
  double focal_length_mm = 12.7;
  int disk_radius_px = 60;
  double mm_per_px = 0.36;
  int image_width = 128;
  int image_height = 128;

  double center_x() const { return (image_width - 1) / 2.0; }
  double center_y() const { return (image_height - 1) / 2.0; }

  void validate() const {
    if (!(focal_length_mm > 0)) throw std::invalid_argument("focal_length_mm must be positive");
    if (disk_radius_px < 8) throw std::invalid_argument("disk_radius_px must be at least 8");
    if (!(mm_per_px > 0)) throw std::invalid_argument("mm_per_px must be positive");
    // Beyond 2F the mirror reflects rays from below the surface plane.
    if (disk_radius_px * mm_per_px > 2.0 * focal_length_mm + 1e-12)
      throw std::invalid_argument("disk radius exceeds the mirror's 2F grazing radius");
    if (2.0 * disk_radius_px + 1 > std::min(image_width, image_height))
      throw std::invalid_argument("disk does not fit inside the image");
  }
};

inline const Vec3 kSurfaceNormal{0.0, -1.0, 0.0};

// Filled circle of `radius` pixels centred in a width x height image.
inline Mask disk_mask(int width, int height, double radius) {
  Mask m(width, height, 0);
  const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double du = x - cx, dv = y - cy;
      m(x, y) = du * du + dv * dv <= radius * radius ? 1 : 0;
    }
  return m;
}

// Radius of the largest circle centred in the image.
inline double inscribed_radius(int width, int height) {
  return (std::min(width, height) - 1) / 2.0;
}

struct ReflectanceDisk {
  Grid<double> pixels;  // [0, 1]
  Mask mask;            // nonzero inside the disk
  std::string class_label;
  int instance_id = 0;
  double illum_angle_deg = 0.0;
  std::string exposure_tag = "default";
};

// Angle subtended at the focus by two disk points separated by `d` around
// coordinate z (same length unit as F):
//   alpha(z) = atan((z - d/2) / ((z - d/2)^2 / 4F - F))
//            - atan((z + d/2) / ((z + d/2)^2 / 4F - F))
inline double cone_angle(double z, double focal, double d = 2.0) {
  if (!(focal > 0)) throw std::domain_error("cone_angle: focal length must be positive");
  if (!(d >= 0)) throw std::domain_error("cone_angle: separation must be nonnegative");
  const double lo = z - d / 2.0, hi = z + d / 2.0;
  const double den_lo = lo * lo / (4.0 * focal) - focal;
  const double den_hi = hi * hi / (4.0 * focal) - focal;
  if (den_lo == 0.0 || den_hi == 0.0)
    throw std::domain_error("cone_angle: ray passes through the mirror rim (zero denominator)");
  return std::atan(lo / den_lo) - std::atan(hi / den_hi);
}

// Unit vector from the focus to the mirror point imaged at disk offset (u, v)
// pixels from the disk centre.
inline Vec3 disk_to_direction(double u, double v, const MirrorGeometry& geom) {
  const double r = geom.disk_radius_px;
  if (u * u + v * v > r * r * (1.0 + 1e-12))
    throw std::domain_error("disk_to_direction: (" + std::to_string(u) + ", " +
                            std::to_string(v) + ") lies outside the disk");
  const double x = u * geom.mm_per_px, z = v * geom.mm_per_px;
  const double f = geom.focal_length_mm;
  const double y = (x * x + z * z) / (4.0 * f) - f;
  return normalized({x, y, z});
}

enum class BrdfModel { lambertian, specular_lobe, two_lobe, iridescent };

inline std::string to_string(BrdfModel m) {
  switch (m) {
    case BrdfModel::lambertian: return "lambertian";
    case BrdfModel::specular_lobe: return "specular-lobe";
    case BrdfModel::two_lobe: return "two-lobe";
    case BrdfModel::iridescent: return "iridescent";
  }
  return "?";
}

inline BrdfModel parse_brdf_model(const std::string& s) {
  if (s == "lambertian") return BrdfModel::lambertian;
  if (s == "specular-lobe") return BrdfModel::specular_lobe;
  if (s == "two-lobe") return BrdfModel::two_lobe;
  if (s == "iridescent") return BrdfModel::iridescent;
  throw std::invalid_argument("unknown BRDF model '" + s + "'");
}

// Parametric reflectance used to synthesize disks. Lobe directions are given
// for frontal illumination and rotate with the light about the z axis, the
// way a mirror reflection would.
struct BrdfSpec {
  BrdfModel model = BrdfModel::lambertian;
  double albedo = 0.5;
  Vec3 lobe_direction = kSurfaceNormal;
  double lobe_exponent = 10.0;
  double iridescence_rate = 0.0;  // radians of modulation phase per radian of view angle
  double noise_sigma = 0.0;

  void validate() const {
    if (!(albedo >= 0 && albedo <= 1)) throw std::invalid_argument("albedo must be in [0, 1]");
    if (!(lobe_exponent > 0)) throw std::invalid_argument("lobe_exponent must be positive");
    if (!(noise_sigma >= 0)) throw std::invalid_argument("noise_sigma must be nonnegative");
    if (!(std::abs(norm(lobe_direction) - 1.0) < 1e-9))
      throw std::invalid_argument("lobe_direction must be a unit vector");
  }
};

namespace detail {

inline Vec3 rotate_z(const Vec3& v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]};
}

inline double lobe(const Vec3& view, const Vec3& axis, double exponent) {
  const double c = dot(view, axis);
  return c > 0 ? std::pow(c, exponent) : 0.0;
}

}  // namespace detail

inline Vec3 illumination_direction(double illum_angle_deg) {
  const double t = illum_angle_deg * std::numbers::pi / 180.0;
  return {std::sin(t), -std::cos(t), 0.0};
}

// Noise-free radiance in [0, 1] for viewing direction `view`.
inline double evaluate_brdf(const BrdfSpec& spec, const Vec3& view, double illum_angle_deg) {
  const double t = illum_angle_deg * std::numbers::pi / 180.0;
  const double cos_i = std::max(0.0, dot(kSurfaceNormal, illumination_direction(illum_angle_deg)));
  const Vec3 axis = detail::rotate_z(spec.lobe_direction, -t);
  double value = 0.0;
  switch (spec.model) {
    case BrdfModel::lambertian:
      value = spec.albedo * cos_i;
      break;
    case BrdfModel::specular_lobe:
      value = spec.albedo * detail::lobe(view, axis, spec.lobe_exponent);
      break;
    case BrdfModel::two_lobe: {
      const Vec3 mirrored{-spec.lobe_direction[0], spec.lobe_direction[1], -spec.lobe_direction[2]};
      const Vec3 axis2 = detail::rotate_z(mirrored, -t);
      value = 0.5 * spec.albedo *
              (detail::lobe(view, axis, spec.lobe_exponent) +
               detail::lobe(view, axis2, spec.lobe_exponent));
      break;
    }
    case BrdfModel::iridescent: {
      const double gamma = std::acos(std::clamp(dot(view, axis), -1.0, 1.0));
      value = spec.albedo * cos_i * (0.5 + 0.5 * std::cos(spec.iridescence_rate * gamma));
      break;
    }
  }
  return std::clamp(value, 0.0, 1.0);
}

// Renders one disk. Pure: the same arguments always give the same image.
inline ReflectanceDisk render_disk(const BrdfSpec& spec, double illum_angle_deg,
                                   const MirrorGeometry& geom, std::uint64_t seed) {
  spec.validate();
  geom.validate();
  ReflectanceDisk disk;
  disk.pixels = Grid<double>(geom.image_width, geom.image_height, 0.0);
  disk.mask = disk_mask(geom.image_width, geom.image_height, geom.disk_radius_px);
  disk.illum_angle_deg = illum_angle_deg;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double cx = geom.center_x(), cy = geom.center_y();
  for (int y = 0; y < geom.image_height; ++y)
    for (int x = 0; x < geom.image_width; ++x) {
      if (!disk.mask(x, y)) continue;
      const Vec3 view = disk_to_direction(x - cx, y - cy, geom);
      double v = evaluate_brdf(spec, view, illum_angle_deg);
      if (spec.noise_sigma > 0) v += spec.noise_sigma * noise(rng);
      disk.pixels(x, y) = std::clamp(v, 0.0, 1.0);
    }
  return disk;
}

struct ClassSpec {
  std::string label;
  BrdfSpec brdf;
};

// Class spec files hold one class per line:
//
//   # label  model          key=value ...
//   matte    lambertian     albedo=0.6 noise=0.02
//   glossy   specular-lobe  albedo=0.9 exponent=40 lobe=0,-1,0 noise=0.02
//
// Keys: albedo, exponent, lobe (x,y,z; normalized on load), rate, noise.
inline std::vector<ClassSpec> parse_class_specs(std::istream& in, const std::string& source = "<input>") {
  std::vector<ClassSpec> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string label, model;
    if (!(ls >> label)) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (!(ls >> model)) throw std::invalid_argument(where + ": missing BRDF model");
    ClassSpec cs;
    cs.label = label;
    try {
      cs.brdf.model = parse_brdf_model(model);
      std::string kv;
      while (ls >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("expected key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        if (key == "albedo") cs.brdf.albedo = std::stod(val);
        else if (key == "exponent") cs.brdf.lobe_exponent = std::stod(val);
        else if (key == "rate") cs.brdf.iridescence_rate = std::stod(val);
        else if (key == "noise") cs.brdf.noise_sigma = std::stod(val);
        else if (key == "lobe") {
          Vec3 d{};
          std::istringstream vs(val);
          std::string part;
          for (int k = 0; k < 3; ++k) {
            if (!std::getline(vs, part, ',')) throw std::invalid_argument("lobe needs 3 components");
            d[static_cast<std::size_t>(k)] = std::stod(part);
          }
          cs.brdf.lobe_direction = normalized(d);
        } else {
          throw std::invalid_argument("unknown key '" + key + "'");
        }
      }
      cs.brdf.validate();
    } catch (const std::exception& e) {
      throw std::invalid_argument(where + ": " + e.what());
    }
    out.push_back(std::move(cs));
  }
  return out;
}

inline std::vector<ClassSpec> load_class_specs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StageError("gen", "cannot open class spec file: " + path.string());
  return parse_class_specs(in, path.string());
}

inline constexpr std::array<double, 3> kIllumAnglesDeg{-10.0, 0.0, 10.0};
inline constexpr int kInstancesPerClass = 3;

// Per-instance variation of a class spec: different physical surfaces of the
// same material differ slightly in gloss and modulation rate.
inline BrdfSpec instance_variant(BrdfSpec spec, int instance) {
  const double k = instance - (kInstancesPerClass - 1) / 2.0;
  spec.lobe_exponent *= 1.0 + 0.1 * k;
  spec.iridescence_rate *= 1.0 + 0.05 * k;
  return spec;
}

// Renders per_class disks for every class, in memory. Disk j of a class uses
// illumination angle kIllumAnglesDeg[j % 3] and instance (j / 3) % 3; the
// noise seed is seed + global index so output is independent of scheduling.
inline std::vector<ReflectanceDisk> synthesize_dataset(const std::vector<ClassSpec>& classes,
                                                       int per_class, const MirrorGeometry& geom,
                                                       std::uint64_t seed) {
  if (classes.size() < 2) throw std::invalid_argument("need at least 2 classes");
  if (per_class < 2) throw std::invalid_argument("per_class must be at least 2");
  geom.validate();
  const std::size_t n = classes.size() * static_cast<std::size_t>(per_class);
  std::vector<ReflectanceDisk> disks(n);
  parallel_for(n, [&](std::size_t g) {
    const auto& cs = classes[g / static_cast<std::size_t>(per_class)];
    const int j = static_cast<int>(g % static_cast<std::size_t>(per_class));
    const int instance = (j / 3) % kInstancesPerClass;
    const double illum = kIllumAnglesDeg[static_cast<std::size_t>(j % 3)];
    ReflectanceDisk d = render_disk(instance_variant(cs.brdf, instance), illum, geom, seed + g);
    d.class_label = cs.label;
    d.instance_id = instance;
    disks[g] = std::move(d);
  });
  return disks;
}

// Sidecar mask path for an image: "a/b.png" -> "a/b.mask.png".
inline std::filesystem::path mask_sidecar_path(const std::filesystem::path& image) {
  auto p = image;
  p.replace_extension(".mask.png");
  return p;
}

// Writes a synthetic dataset (8-bit PNGs, mask sidecars when the disk is
// smaller than the inscribed circle, manifest.csv) and returns its manifest.
inline Manifest gen_dataset(const std::vector<ClassSpec>& classes, int per_class,
                            const MirrorGeometry& geom, std::uint64_t seed,
                            const std::filesystem::path& out_dir) {
  auto disks = synthesize_dataset(classes, per_class, geom, seed);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw StageError("gen", "cannot create output directory " + out_dir.string() + ": " + ec.message());

  const bool needs_sidecar =
      geom.disk_radius_px < inscribed_radius(geom.image_width, geom.image_height);
  Manifest m;
  m.base_dir = out_dir;
  for (std::size_t g = 0; g < disks.size(); ++g) {
    const auto& d = disks[g];
    const int j = static_cast<int>(g % static_cast<std::size_t>(per_class));
    char name[32];
    std::snprintf(name, sizeof name, "_%04d.png", j);
    const fs::path rel = fs::path(d.class_label) / (d.class_label + name);
    fs::create_directories(out_dir / rel.parent_path(), ec);
    if (ec) throw StageError("gen", "cannot create " + (out_dir / rel.parent_path()).string());
    try {
      png::write_gray8(out_dir / rel, png::quantize(d.pixels));
      if (needs_sidecar) {
        Grid<std::uint8_t> m8(d.mask.width(), d.mask.height());
        for (std::size_t i = 0; i < m8.size(); ++i) m8.data()[i] = d.mask.data()[i] ? 255 : 0;
        png::write_gray8(mask_sidecar_path(out_dir / rel), m8);
      }
    } catch (const std::exception& e) {
      throw StageError("gen", e.what());
    }
    m.rows.push_back({rel.generic_string(), d.class_label, d.instance_id, d.illum_angle_deg,
                      d.exposure_tag});
  }
  write_manifest(out_dir / "manifest.csv", m);
  return m;
}

}  // namespace refhash
