#include "cfseg/io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include <openssl/evp.h>
#include <png.h>

namespace cfseg::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError(path.string(), std::string("cannot open (mode ") + mode + ")");
  return f;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError(path.parent_path().string(), ec.message());
  }
}

// libpng reports errors through longjmp; wrap them into IoError at the call site.
struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  PngWriter() {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png) info = png_create_info_struct(png);
  }
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
};

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  PngReader() {
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png) info = png_create_info_struct(png);
  }
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct Raw {
  int width = 0, height = 0, channels = 0, depth = 0;
  std::vector<std::uint8_t> bytes;  // row-major, big-endian for 16-bit
};

void write_png(const fs::path& path, const Raw& raw) {
  ensure_parent(path);
  auto file = open_file(path, "wb");
  PngWriter w;
  if (!w.png || !w.info) throw IoError(path.string(), "png init failed");
  if (setjmp(png_jmpbuf(w.png))) throw IoError(path.string(), "png write failed");
  png_init_io(w.png, file.get());
  const int color = raw.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(w.png, w.info, raw.width, raw.height, raw.depth, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  const std::size_t stride = static_cast<std::size_t>(raw.width) * raw.channels * (raw.depth / 8);
  for (int y = 0; y < raw.height; ++y)
    png_write_row(w.png, const_cast<png_bytep>(raw.bytes.data() + y * stride));
  png_write_end(w.png, nullptr);
}

struct MemoryReader {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t n) {
  auto* src = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (src->offset + n > src->bytes.size()) png_error(png, "truncated png");
  std::copy_n(src->bytes.data() + src->offset, n, out);
  src->offset += n;
}

void write_to_memory(png_structp png, png_bytep data, png_size_t n) {
  auto* dst = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  dst->insert(dst->end(), data, data + n);
}

Raw read_png_common(png_structp png, png_infop info, const std::string& what) {
  png_read_info(png, info);
  Raw raw;
  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && raw.depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
    raw.depth = 8;
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  raw.channels = png_get_channels(png, info);
  if (raw.channels != 1 && raw.channels != 3)
    throw IoError(what, "unsupported png channel count");
  const std::size_t stride = png_get_rowbytes(png, info);
  raw.bytes.resize(stride * raw.height);
  for (int y = 0; y < raw.height; ++y) png_read_row(png, raw.bytes.data() + y * stride, nullptr);
  png_read_end(png, nullptr);
  return raw;
}

Raw read_png(const fs::path& path) {
  auto file = open_file(path, "rb");
  PngReader r;
  if (!r.png || !r.info) throw IoError(path.string(), "png init failed");
  if (setjmp(png_jmpbuf(r.png))) throw IoError(path.string(), "png read failed");
  png_init_io(r.png, file.get());
  return read_png_common(r.png, r.info, path.string());
}

Raw rgb_raw(const RgbImage& image) {
  Raw raw{image.width(), image.height(), 3, 8, {}};
  raw.bytes.reserve(image.size() * 3);
  for (const auto& px : image.values()) {
    raw.bytes.push_back(px.r);
    raw.bytes.push_back(px.g);
    raw.bytes.push_back(px.b);
  }
  return raw;
}

}  // namespace

void write_image_png(const fs::path& path, const Image& image) {
  Raw raw{image.width(), image.height(), 1, 16, {}};
  raw.bytes.reserve(image.size() * 2);
  for (float v : image.values()) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0f));
    raw.bytes.push_back(static_cast<std::uint8_t>(q >> 8));
    raw.bytes.push_back(static_cast<std::uint8_t>(q & 0xff));
  }
  write_png(path, raw);
}

Image read_image_png(const fs::path& path) {
  const Raw raw = read_png(path);
  if (raw.channels != 1) throw IoError(path.string(), "expected single-channel image");
  Image image(raw.height, raw.width);
  auto out = image.values();
  if (raw.depth == 16) {
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = static_cast<float>((raw.bytes[2 * i] << 8) | raw.bytes[2 * i + 1]) / 65535.0f;
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = raw.bytes[i] / 255.0f;
  }
  return image;
}

void write_mask_png(const fs::path& path, const Mask& mask) {
  validate_mask(mask);
  write_png(path, Raw{mask.width(), mask.height(), 1, 8, mask.storage()});
}

Mask read_mask_png(const fs::path& path) {
  Raw raw = read_png(path);
  if (raw.channels != 1 || raw.depth != 8)
    throw IoError(path.string(), "expected 8-bit single-channel label png");
  Mask mask(raw.height, raw.width, std::move(raw.bytes));
  try {
    validate_mask(mask);
  } catch (const ValidationError& e) {
    throw IoError(path.string(), e.what());
  }
  return mask;
}

void write_rgb_png(const fs::path& path, const RgbImage& image) { write_png(path, rgb_raw(image)); }

std::vector<std::uint8_t> encode_rgb_png(const RgbImage& image) {
  const Raw raw = rgb_raw(image);
  std::vector<std::uint8_t> out;
  PngWriter w;
  if (!w.png || !w.info) throw IoError("<memory>", "png init failed");
  if (setjmp(png_jmpbuf(w.png))) throw IoError("<memory>", "png encode failed");
  png_set_write_fn(w.png, &out, write_to_memory, nullptr);
  png_set_IHDR(w.png, w.info, raw.width, raw.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  for (int y = 0; y < raw.height; ++y)
    png_write_row(w.png, const_cast<png_bytep>(raw.bytes.data() + y * raw.width * 3));
  png_write_end(w.png, nullptr);
  return out;
}

RgbImage decode_rgb_png(std::span<const std::uint8_t> bytes) {
  MemoryReader src{bytes, 0};
  PngReader r;
  if (!r.png || !r.info) throw IoError("<memory>", "png init failed");
  if (setjmp(png_jmpbuf(r.png))) throw IoError("<memory>", "png decode failed");
  png_set_read_fn(r.png, &src, read_from_memory);
  png_set_gray_to_rgb(r.png);
  png_set_strip_16(r.png);
  const Raw raw = read_png_common(r.png, r.info, "<memory>");
  RgbImage image(raw.height, raw.width);
  auto out = image.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = {raw.bytes[3 * i], raw.bytes[3 * i + 1], raw.bytes[3 * i + 2]};
  return image;
}

RgbImage overlay(const Image& image, const Mask& mask, float alpha) {
  require_same_shape(image, mask, "overlay");
  RgbImage out(image.height(), image.width());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const float g = std::clamp(image(y, x), 0.0f, 1.0f) * 255.0f;
      float r = g, gr = g, b = g;
      if (mask(y, x) == kRightLung) {
        r = (1 - alpha) * g + alpha * 255.0f;
        gr = (1 - alpha) * g;
        b = (1 - alpha) * g;
      } else if (mask(y, x) == kLeftLung) {
        r = (1 - alpha) * g;
        gr = (1 - alpha) * g + alpha * 255.0f;
        b = (1 - alpha) * g;
      }
      out(y, x) = {static_cast<std::uint8_t>(std::lround(r)), static_cast<std::uint8_t>(std::lround(gr)),
                   static_cast<std::uint8_t>(std::lround(b))};
    }
  }
  return out;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::vector<std::uint8_t> out(3 * text.size() / 4 + 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw ArgumentError("invalid base64");
  std::size_t len = static_cast<std::size_t>(n);
  // EVP_DecodeBlock keeps the padding bytes.
  if (!text.empty() && text.back() == '=') --len;
  if (text.size() > 1 && text[text.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

std::vector<Json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  std::vector<Json> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw IoError(path.string(), "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

void write_jsonl(const fs::path& path, std::span<const Json> records) {
  std::string text;
  for (const auto& r : records) {
    text += r.dump();
    text += '\n';
  }
  write_text(path, text);
}

Json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw IoError(path.string(), e.what());
  }
}

void write_json(const fs::path& path, const Json& value) { write_text(path, value.dump(2) + "\n"); }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, std::string_view text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError(path.string(), "write failed");
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_absolute() ? p : base / p;
}

}  // namespace cfseg::io
