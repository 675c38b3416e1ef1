#include <fstream>

#include "support.hpp"

using namespace refhash;
using refhash::testing::scratch_dir;

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

void tiny_png(const std::filesystem::path& p) {
  std::filesystem::create_directories(p.parent_path());
  png::write_gray8(p, Grid<std::uint8_t>(4, 4, 7));
}

}  // namespace

TEST(Png, RoundTripsEightBitGray) {
  const auto dir = scratch_dir("png");
  Grid<std::uint8_t> img(13, 7);
  for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = static_cast<std::uint8_t>(i * 37 % 256);
  png::write_gray8(dir / "a.png", img);
  EXPECT_TRUE(png::read_gray8(dir / "a.png") == img);
  EXPECT_THROW(png::read_gray8(dir / "missing.png"), std::runtime_error);
  write_file(dir / "fake.png", "not a png at all");
  EXPECT_THROW(png::read_gray8(dir / "fake.png"), std::runtime_error);
}

TEST(Png, QuantizeAndBackStaysWithinHalfAStep) {
  Grid<double> g(16, 1);
  for (int x = 0; x < 16; ++x) g(x, 0) = x / 15.0;
  const auto back = png::to_unit(png::quantize(g));
  for (int x = 0; x < 16; ++x) EXPECT_NEAR(back(x, 0), g(x, 0), 0.5 / 255.0 + 1e-12);
}

TEST(Manifest, WriteThenLoadRoundTrips) {
  const auto dir = scratch_dir("m");
  Manifest m;
  m.rows = {{"a/x.png", "alpha", 1, -10, "short"}, {"b/y, z.png", "be\"ta", 2, 0.5, "default"}};
  for (const auto& r : m.rows) tiny_png(dir / r.path);
  write_manifest(dir / "manifest.csv", m);
  const auto back = load_manifest(dir / "manifest.csv");
  EXPECT_EQ(back.rows, m.rows);
  EXPECT_TRUE(back.warnings.empty());
  EXPECT_EQ(back.base_dir, dir);
  EXPECT_EQ(back.classes(), (std::vector<std::string>{"alpha", "be\"ta"}));
}

TEST(Manifest, MissingImageIsNamed) {
  const auto dir = scratch_dir("m");
  write_file(dir / "manifest.csv", "# refhash-manifest v1\npath,class\nnothere.png,a\n");
  try {
    load_manifest(dir / "manifest.csv");
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "manifest");
    EXPECT_NE(std::string(e.what()).find("nothere.png"), std::string::npos);
  }
  EXPECT_NO_THROW(load_manifest(dir / "manifest.csv", false));
}

TEST(Manifest, DuplicatePathIsAnError) {
  const auto dir = scratch_dir("m");
  tiny_png(dir / "a.png");
  write_file(dir / "manifest.csv", "# refhash-manifest v1\npath,class\na.png,x\na.png,y\n");
  EXPECT_THROW(load_manifest(dir / "manifest.csv"), StageError);
}

TEST(Manifest, UnknownColumnWarnsAndIsIgnored) {
  const auto dir = scratch_dir("m");
  tiny_png(dir / "a.png");
  write_file(dir / "manifest.csv", "# refhash-manifest v1\npath,class,notes\na.png,x,hello\n");
  const auto m = load_manifest(dir / "manifest.csv");
  ASSERT_EQ(m.warnings.size(), 1u);
  EXPECT_NE(m.warnings[0].find("notes"), std::string::npos);
  EXPECT_EQ(m.rows[0].label, "x");
}

TEST(Manifest, HeaderAndFieldErrors) {
  const auto dir = scratch_dir("m");
  tiny_png(dir / "a.png");
  const std::vector<std::string> bad{
      "",
      "path,class\na.png,x\n",
      "# refhash-manifest v2\npath,class\na.png,x\n",
      "# refhash-manifest v1\npath,instance\na.png,1\n",
      "# refhash-manifest v1\npath,class,instance\na.png,x,one\n",
      "# refhash-manifest v1\npath,class\na.png,\n",
  };
  for (const auto& text : bad) {
    write_file(dir / "manifest.csv", text);
    EXPECT_THROW(load_manifest(dir / "manifest.csv"), StageError) << text;
  }
  EXPECT_THROW(load_manifest(dir / "absent.csv"), StageError);
}

TEST(Manifest, ThousandsOfRows) {
  const auto dir = scratch_dir("m");
  Manifest m;
  for (int i = 0; i < 3600; ++i) {
    const std::string path = "c" + std::to_string(i % 20) + "/d" + std::to_string(i) + ".png";
    m.rows.push_back({path, "class" + std::to_string(i % 20), i % 3, (i % 3 - 1) * 10.0, "default"});
    tiny_png(dir / path);
  }
  write_manifest(dir / "manifest.csv", m);
  const auto back = load_manifest(dir / "manifest.csv");
  EXPECT_EQ(back.rows.size(), 3600u);
  EXPECT_EQ(back.classes().size(), 20u);
  EXPECT_EQ(back.rows, m.rows);
}

TEST(ManifestDataset, SidecarMaskOrInscribedCircle) {
  const auto dir = scratch_dir("m");
  const auto g = refhash::testing::small_geometry();
  const auto written = gen_dataset(refhash::testing::five_classes(), 2, g, 4, dir);
  const auto m = load_manifest(dir / "manifest.csv");
  const auto ds = dataset_from_manifest(m);
  ASSERT_EQ(ds.size(), 10u);
  const auto d0 = ds.load(0);
  EXPECT_TRUE(d0.mask == disk_mask(48, 48, g.disk_radius_px));
  EXPECT_EQ(d0.class_label, m.rows[0].label);

  std::filesystem::remove(mask_sidecar_path(dir / m.rows[0].path));
  const auto d1 = ds.load(0);
  EXPECT_TRUE(d1.mask == disk_mask(48, 48, inscribed_radius(48, 48)));
}
