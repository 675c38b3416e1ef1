#include <cmath>
#include <numeric>

#include "support.hpp"

using namespace refhash;
using refhash::testing::random_disk;

namespace {

ReflectanceDisk field_disk(int size, double radius, double (*f)(int, int)) {
  ReflectanceDisk d;
  d.pixels = Grid<double>(size, size, 0.0);
  d.mask = disk_mask(size, size, radius);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (d.mask(x, y)) d.pixels(x, y) = f(x, y);
  return d;
}

// Direct correlation of one kernel at (x, y) on the raw image.
double correlate(const Grid<double>& img, const FilterKernel& k, int x, int y) {
  double acc = 0;
  for (int dy = -k.half; dy <= k.half; ++dy)
    for (int dx = -k.half; dx <= k.half; ++dx) acc += k.at(dx, dy) * img(x + dx, y + dy);
  return acc;
}

FilterOptions raw() {
  FilterOptions o;
  o.standardize = false;
  return o;
}

}  // namespace

TEST(FilterBank, HasTheExpectedComposition) {
  const auto bank = build_filter_bank();
  ASSERT_EQ(bank.kernels.size(), 24u);
  int gauss = 0, log = 0, oriented = 0;
  for (const auto& k : bank.kernels) {
    gauss += k.kind == FilterKind::gaussian;
    log += k.kind == FilterKind::log;
    oriented += k.kind == FilterKind::oriented;
  }
  EXPECT_EQ(gauss, 4);
  EXPECT_EQ(log, 4);
  EXPECT_EQ(oriented, 16);
}

TEST(FilterBank, KernelSums) {
  for (const auto& k : build_filter_bank().kernels) {
    const double sum = std::accumulate(k.weights.begin(), k.weights.end(), 0.0);
    EXPECT_NEAR(sum, k.kind == FilterKind::gaussian ? 1.0 : 0.0, 1e-9) << k.describe();
  }
}

TEST(FilterBank, SupportIsOddAndCoversSixSigma) {
  for (const auto& k : build_filter_bank().kernels) {
    EXPECT_EQ(k.side() % 2, 1);
    EXPECT_GE(k.side(), 6.0 * k.scale - 1e-9);
    EXPECT_LT(k.side(), 6.0 * k.scale + 2.0);
  }
}

TEST(FilterBank, RejectsBadScales) {
  EXPECT_THROW(build_filter_bank({1.0, 2.0, 2.0, 3.0}), std::invalid_argument);
  EXPECT_THROW(build_filter_bank({0.0, 1.0, 2.0, 3.0}), std::invalid_argument);
  EXPECT_THROW(build_filter_bank({3.0, 2.0, 1.0, 0.5}), std::invalid_argument);
}

TEST(ApplyFilterBank, LaplacianOfConstantIsZero) {
  const auto d = field_disk(48, 22, [](int, int) { return 0.7; });
  const auto bank = build_filter_bank();
  const auto r = apply_filter_bank(d, bank, raw());
  for (std::size_t i = 0; i < r.count(); ++i)
    for (int f = 4; f < 8; ++f) ASSERT_NEAR(r.at(i)[static_cast<std::size_t>(f)], 0.0, 1e-12);
}

TEST(ApplyFilterBank, OrientedResponseToHorizontalRamp) {
  const auto d = field_disk(48, 22, [](int x, int) { return 0.01 * x; });
  const auto bank = build_filter_bank();
  const auto r = apply_filter_bank(d, bank, raw());
  ASSERT_GT(r.count(), 0u);
  // Kernel 8 is 0 degrees, kernel 12 is 90 degrees at the same scale.
  ASSERT_EQ(bank.kernels[8].orientation_deg, 0.0);
  ASSERT_EQ(bank.kernels[12].orientation_deg, 90.0);
  const double first = r.at(0)[8];
  EXPECT_GT(std::abs(first), 1e-4);
  for (std::size_t i = 0; i < r.count(); ++i) {
    ASSERT_NEAR(r.at(i)[8], first, 1e-12);
    ASSERT_NEAR(r.at(i)[12], 0.0, 1e-12);
  }
}

TEST(ApplyFilterBank, MatchesBruteForceCorrelation) {
  const auto d = random_disk(48, 48, 22, 3);
  const auto bank = build_filter_bank();
  const auto r = apply_filter_bank(d, bank, raw());
  const std::size_t step = std::max<std::size_t>(1, r.count() / 100);
  for (std::size_t i = 0; i < r.count(); i += step) {
    const int x = r.pixels[i] % r.width, y = r.pixels[i] / r.width;
    for (std::size_t f = 0; f < bank.kernels.size(); ++f)
      ASSERT_NEAR(r.at(i)[f], correlate(d.pixels, bank.kernels[f], x, y), 1e-12);
  }
}

TEST(ApplyFilterBank, ValidPixelsHaveFullSupportInsideTheMask) {
  const auto d = random_disk(48, 48, 22, 4);
  const auto bank = build_filter_bank();
  const auto r = apply_filter_bank(d, bank);
  const int h = bank.max_half();
  std::size_t mask_count = 0;
  for (auto v : d.mask.data()) mask_count += v != 0;
  EXPECT_LT(r.count(), mask_count);
  for (int p : r.pixels) {
    const int x = p % r.width, y = p / r.width;
    for (int dy = -h; dy <= h; ++dy)
      for (int dx = -h; dx <= h; ++dx) ASSERT_TRUE(d.mask(x + dx, y + dy));
  }
  // And every pixel with full support is valid.
  std::size_t full = 0;
  for (int y = h; y < 48 - h; ++y)
    for (int x = h; x < 48 - h; ++x) {
      bool ok = true;
      for (int dy = -h; dy <= h && ok; ++dy)
        for (int dx = -h; dx <= h && ok; ++dx) ok = d.mask(x + dx, y + dy) != 0;
      full += ok;
    }
  EXPECT_EQ(full, r.count());
}

TEST(ApplyFilterBank, LinearWithoutStandardization) {
  const auto a = random_disk(48, 48, 22, 5);
  const auto b = random_disk(48, 48, 22, 6);
  auto sum = a;
  for (std::size_t i = 0; i < sum.pixels.size(); ++i)
    sum.pixels.data()[i] = 2.0 * a.pixels.data()[i] - 0.5 * b.pixels.data()[i];
  const auto bank = build_filter_bank();
  const auto ra = apply_filter_bank(a, bank, raw());
  const auto rb = apply_filter_bank(b, bank, raw());
  const auto rs = apply_filter_bank(sum, bank, raw());
  for (std::size_t i = 0; i < rs.responses.size(); ++i)
    ASSERT_NEAR(rs.responses[i], 2.0 * ra.responses[i] - 0.5 * rb.responses[i], 1e-12);
}

TEST(ApplyFilterBank, StandardizedResponsesAreAffineInvariant) {
  const auto a = random_disk(48, 48, 22, 7);
  auto b = a;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x)
      if (b.mask(x, y)) b.pixels(x, y) = 3.5 * a.pixels(x, y) + 0.25;
  const auto bank = build_filter_bank();
  const auto ra = apply_filter_bank(a, bank);
  const auto rb = apply_filter_bank(b, bank);
  ASSERT_EQ(ra.responses.size(), rb.responses.size());
  for (std::size_t i = 0; i < ra.responses.size(); ++i) ASSERT_NEAR(ra.responses[i], rb.responses[i], 1e-9);
}

TEST(ApplyFilterBank, ConstantDiskGivesZeros) {
  const auto d = field_disk(48, 22, [](int, int) { return 0.4; });
  const auto r = apply_filter_bank(d, build_filter_bank());
  ASSERT_GT(r.count(), 0u);
  for (double v : r.responses) ASSERT_EQ(v, 0.0);
}

TEST(ApplyFilterBank, TooSmallDiskNamesTheKernel) {
  const auto d = random_disk(24, 24, 8, 1);
  const auto bank = build_filter_bank();
  try {
    apply_filter_bank(d, bank);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find(bank.largest().describe()), std::string::npos) << e.what();
  }
}

TEST(ApplyFilterBank, MaskSizeMismatch) {
  auto d = random_disk(48, 48, 22, 1);
  d.mask = disk_mask(40, 40, 18);
  EXPECT_THROW(apply_filter_bank(d, build_filter_bank()), std::invalid_argument);
}

TEST(MaskBounds, TightBox) {
  Mask m(10, 8, 0);
  m(2, 3) = 1;
  m(6, 5) = 1;
  EXPECT_EQ(mask_bounds(m), (BoundingBox{2, 3, 6, 5}));
  EXPECT_EQ(mask_bounds(Mask(4, 4, 0)).width(), 0);
}
