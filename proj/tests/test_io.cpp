#include <doctest.h>

#include <filesystem>

#include "cfseg/io.hpp"

namespace fs = std::filesystem;
using namespace cfseg;

namespace {
fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / "cfseg_test_io" / name;
  fs::create_directories(p.parent_path());
  return p;
}
}  // namespace

TEST_CASE("image png round trip keeps 16-bit precision") {
  Image img(5, 7);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) img(y, x) = static_cast<float>((y * 7 + x) / 34.0);
  const auto p = scratch("img.png");
  io::write_image_png(p, img);
  const auto back = io::read_image_png(p);
  REQUIRE(back.height() == 5);
  REQUIRE(back.width() == 7);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(back.values()[i] == doctest::Approx(img.values()[i]).epsilon(2e-5));
}

TEST_CASE("mask png keeps raw labels") {
  Mask m(3, 3);
  m(0, 0) = kRightLung;
  m(2, 2) = kLeftLung;
  const auto p = scratch("mask.png");
  io::write_mask_png(p, m);
  CHECK(io::read_mask_png(p) == m);
}

TEST_CASE("mask png with an out-of-range label is rejected") {
  Mask m(2, 2);
  m(1, 1) = 7;
  CHECK_THROWS(io::write_mask_png(scratch("bad.png"), m));
}

TEST_CASE("missing file raises IoError with the path") {
  try {
    io::read_image_png("/nonexistent/x.png");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.path() == "/nonexistent/x.png");
  }
}

TEST_CASE("base64 matches RFC 4648 vectors") {
  auto enc = [](std::string s) {
    return io::base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  };
  CHECK(enc("") == "");
  CHECK(enc("f") == "Zg==");
  CHECK(enc("fo") == "Zm8=");
  CHECK(enc("foobar") == "Zm9vYmFy");
  const auto dec = io::base64_decode("Zm9vYg==");
  CHECK(std::string(dec.begin(), dec.end()) == "foob");
}

TEST_CASE("sha256 of known strings") {
  CHECK(io::sha256_hex(std::string_view("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(io::sha256_hex(std::string_view("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("rgb png encodes and decodes in memory") {
  io::RgbImage rgb(2, 3);
  rgb(1, 2) = {255, 10, 3};
  const auto bytes = io::encode_rgb_png(rgb);
  const auto back = io::decode_rgb_png(bytes);
  CHECK(back(1, 2).r == 255);
  CHECK(back(1, 2).g == 10);
  CHECK(back(0, 0).b == 0);
}

TEST_CASE("overlay paints right lung red and left lung green") {
  Image img(1, 3, 0.5f);
  Mask m(1, 3);
  m(0, 1) = kRightLung;
  m(0, 2) = kLeftLung;
  const auto o = io::overlay(img, m);
  CHECK(o(0, 0).r == o(0, 0).g);
  CHECK(o(0, 1).r > o(0, 1).g);
  CHECK(o(0, 2).g > o(0, 2).r);
}

TEST_CASE("jsonl round trip") {
  const auto p = scratch("x.jsonl");
  std::vector<io::Json> rows{{{"a", 1}}, {{"b", "two"}}};
  io::write_jsonl(p, rows);
  const auto back = io::read_jsonl(p);
  REQUIRE(back.size() == 2);
  CHECK(back[1]["b"] == "two");
}
