#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "leaffew/data/manifest.hpp"
#include "leaffew/image/ppm.hpp"

using namespace leaffew;
using namespace leaffew::data;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("leaffew_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

void write_tiny_ppm(const fs::path& p) {
  image::Image img;
  img.width = 4;
  img.height = 4;
  img.rgb.assign(48, 100);
  image::save_ppm(img, p.string());
}

fs::path write_manifest(const TempDir& dir, const std::string& body,
                        const std::string& header =
                            R"({"name":"toy"})") {
  const fs::path p = dir.path / "toy.manifest";
  std::ofstream out(p);
  out << header << "\n" << body;
  return p;
}

}  // namespace

TEST_CASE("manifest loads, counts classes, sorts the roster") {
  TempDir dir;
  write_tiny_ppm(dir.path / "a.ppm");
  write_tiny_ppm(dir.path / "b.ppm");
  write_tiny_ppm(dir.path / "c.ppm");
  auto p = write_manifest(dir,
                          "img_b,b.ppm,zeta,cropA,lab\n"
                          "img_a,a.ppm,alpha,cropA,lab\n"
                          "img_c,c.ppm,zeta,cropB,field\n");
  auto m = load_manifest(p);
  REQUIRE(m.records.size() == 3);
  REQUIRE(m.classes == std::vector<std::string>{"alpha", "zeta"});
  REQUIRE(m.class_counts.at("zeta") == 2);
  REQUIRE(m.by_id("img_c").background == Background::field);
}

TEST_CASE("duplicate image ids are rejected by name") {
  TempDir dir;
  write_tiny_ppm(dir.path / "a.ppm");
  auto p = write_manifest(dir,
                          "dup,a.ppm,alpha,crop,lab\n"
                          "dup,a.ppm,alpha,crop,lab\n");
  REQUIRE_THROWS_WITH(load_manifest(p),
                      Catch::Matchers::ContainsSubstring("dup"));
}

TEST_CASE("empty manifest is a validation error") {
  TempDir dir;
  auto p = write_manifest(dir, "");
  REQUIRE_THROWS_AS(load_manifest(p), ValidationError);
}

TEST_CASE("missing file is an io error") {
  REQUIRE_THROWS_AS(load_manifest("/nonexistent/path.manifest"), IoError);
}

TEST_CASE("unreadable image paths are listed") {
  TempDir dir;
  write_tiny_ppm(dir.path / "ok.ppm");
  auto p = write_manifest(dir,
                          "good,ok.ppm,alpha,crop,lab\n"
                          "ghost,missing.ppm,alpha,crop,lab\n");
  REQUIRE_THROWS_WITH(load_manifest(p),
                      Catch::Matchers::ContainsSubstring("ghost"));
  REQUIRE_NOTHROW(load_manifest(p, /*verify_images=*/false));
}

TEST_CASE("declared class set is enforced") {
  TempDir dir;
  write_tiny_ppm(dir.path / "a.ppm");
  auto p = write_manifest(dir, "x,a.ppm,unknown,crop,lab\n",
                          R"({"name":"toy","classes":["alpha"]})");
  REQUIRE_THROWS_AS(load_manifest(p), ValidationError);
}

TEST_CASE("manifest save/load round trip") {
  TempDir dir;
  write_tiny_ppm(dir.path / "a.ppm");
  write_tiny_ppm(dir.path / "b.ppm");
  auto p = write_manifest(dir,
                          "img_a,a.ppm,alpha,cropA,lab\n"
                          "img_b,b.ppm,beta,cropA,field\n");
  auto m = load_manifest(p);
  save_manifest(m, dir.path / "copy.manifest");
  auto m2 = load_manifest(dir.path / "copy.manifest");
  REQUIRE(m2.records.size() == m.records.size());
  REQUIRE(m2.classes == m.classes);
  REQUIRE(m2.by_id("img_b").crop == "cropA");
}

TEST_CASE("ppm io round trips pixels and resize keeps bounds") {
  TempDir dir;
  image::Image img;
  img.width = 8;
  img.height = 6;
  img.rgb.resize(8 * 6 * 3);
  for (std::size_t i = 0; i < img.rgb.size(); ++i)
    img.rgb[i] = static_cast<std::uint8_t>(i * 7 % 256);
  const auto p = (dir.path / "t.ppm").string();
  image::save_ppm(img, p);
  auto back = image::load_ppm(p);
  REQUIRE(back.width == 8);
  REQUIRE(back.height == 6);
  REQUIRE(back.rgb == img.rgb);

  auto up = image::resize_shorter_side(back, 12);
  REQUIRE(std::min(up.width, up.height) == 12);
  auto cc = image::center_crop(up, 12);
  REQUIRE(cc.width == 12);
  REQUIRE(cc.height == 12);
}
