#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "refhash/refhash.hpp"
#include "../oracles.hpp"

namespace refhash::testing {

// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = std::filesystem::temp_directory_path() / "refhash-tests" /
             (std::string(info->test_suite_name()) + "." + info->name() + "." + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline ReflectanceDisk random_disk(int w, int h, double radius, std::uint64_t seed) {
  ReflectanceDisk d;
  d.pixels = Grid<double>(w, h, 0.0);
  d.mask = disk_mask(w, h, radius);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (d.mask(x, y)) d.pixels(x, y) = u(rng);
  return d;
}

inline std::vector<ClassSpec> five_classes(double noise = 0.02) {
  auto spec = [&](const char* label, BrdfModel m, double albedo, double exponent, Vec3 lobe, double rate) {
    ClassSpec c;
    c.label = label;
    c.brdf.model = m;
    c.brdf.albedo = albedo;
    c.brdf.lobe_exponent = exponent;
    c.brdf.lobe_direction = normalized(lobe);
    c.brdf.iridescence_rate = rate;
    c.brdf.noise_sigma = noise;
    return c;
  };
  return {spec("matte", BrdfModel::lambertian, 0.6, 10, {0, -1, 0}, 0),
          spec("glossy", BrdfModel::specular_lobe, 0.9, 40, {0, -1, 0}, 0),
          spec("satin", BrdfModel::specular_lobe, 0.8, 6, {0, -1, 0}, 0),
          spec("brushed", BrdfModel::two_lobe, 0.9, 20, {0.35, -1, 0}, 0),
          spec("pearl", BrdfModel::iridescent, 0.8, 10, {0, -1, 0}, 12)};
}

// Small geometry that keeps unit tests fast.
inline MirrorGeometry small_geometry() {
  MirrorGeometry g;
  g.image_width = g.image_height = 48;
  g.disk_radius_px = 22;
  g.mm_per_px = 0.9;
  return g;
}

// Five classes, `per_class` disks each, at the small geometry.
inline Dataset tiny_dataset(int per_class = 6, std::uint64_t seed = 1) {
  return dataset_from_disks(synthesize_dataset(five_classes(), per_class, small_geometry(), seed));
}

// Training settings sized for unit tests.
inline TrainConfig tiny_config(Method method = Method::hash) {
  TrainConfig c;
  c.method = method;
  c.textons = 8;
  c.regions = 10;
  c.rounds = 12;
  c.tau = 0.2;
  c.bits = 6;
  c.knn = 3;
  c.kmeans_samples = 3000;
  c.kmeans_iters = 30;
  c.itq_iters = 20;
  c.seed = 3;
  return c;
}

inline std::vector<std::size_t> all_indices(const Dataset& ds) {
  std::vector<std::size_t> v(ds.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace refhash::testing
