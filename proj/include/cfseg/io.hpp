#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cfseg/grid.hpp"

namespace cfseg::io {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// Images are stored as 16-bit grayscale PNG, masks as 8-bit PNG with raw labels.
void write_image_png(const fs::path& path, const Image& image);
Image read_image_png(const fs::path& path);
void write_mask_png(const fs::path& path, const Mask& mask);
Mask read_mask_png(const fs::path& path);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};
using RgbImage = Grid<Rgb>;

void write_rgb_png(const fs::path& path, const RgbImage& image);
std::vector<std::uint8_t> encode_rgb_png(const RgbImage& image);
RgbImage decode_rgb_png(std::span<const std::uint8_t> bytes);

// Alpha-blended label overlay: right lung red, left lung green.
RgbImage overlay(const Image& image, const Mask& mask, float alpha = 0.4f);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::vector<Json> read_jsonl(const fs::path& path);
void write_jsonl(const fs::path& path, std::span<const Json> records);
Json read_json(const fs::path& path);
void write_json(const fs::path& path, const Json& value);
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, std::string_view text);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const fs::path& path);

// Resolves `p` against `base` unless already absolute.
fs::path resolve(const fs::path& base, const fs::path& p);

}  // namespace cfseg::io
