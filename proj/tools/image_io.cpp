#include "image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>

#include "eranet/serialize.hpp"

namespace eranet::io {

namespace {

constexpr std::array<std::uint8_t, 4> kRawMagic{'E', 'R', 'A', 'F'};

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

void png_read_span(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + n > cur->bytes.size()) png_error(png, "truncated PNG data");
  std::memcpy(out, cur->bytes.data() + cur->pos, n);
  cur->pos += n;
}

void png_write_vec(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void png_flush_noop(png_structp) {}

struct PngFailure {
  char msg[256] = "unknown error";
};

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* f = static_cast<PngFailure*>(png_get_error_ptr(png));
  std::snprintf(f->msg, sizeof f->msg, "%s", msg);
  png_longjmp(png, 1);
}

void png_warn_silent(png_structp, png_const_charp) {}

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

}  // namespace

std::uint8_t to_level(float v) {
  const float c = std::clamp(std::isnan(v) ? 0.0f : v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::floor(c * 255.0f + 0.5f));
}

Tensor4<float> decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw ImageError("not a PNG file");
  PngFailure failure;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &failure, png_fail, png_warn_silent);
  if (!png) throw ImageError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ImageError("png: out of memory");
  }
  ReadCursor cur{bytes, 0};
  std::vector<std::uint8_t> rgb;
  std::vector<png_bytep> rows;
  png_uint_32 w = 0, h = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError(std::string("png: ") + failure.msg);
  }
  png_set_read_fn(png, &cur, png_read_span);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  if (png_get_channels(png, info) != 3) png_error(png, "could not convert to RGB");
  rgb.resize(static_cast<std::size_t>(w) * h * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = rgb.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor4<float> out({1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out(0, c, y, x) = static_cast<float>(rgb[(y * w + x) * 3 + c]) / 255.0f;
  return out;
}

std::vector<std::uint8_t> encode_png(const Tensor4<float>& img) {
  const Shape s = img.shape();
  if (s.n != 1 || s.c != 3 || s.h == 0 || s.w == 0) throw ImageError("png: expected a 1x3xHxW image, got " + s.str());
  std::vector<std::uint8_t> rgb(s.h * s.w * 3);
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x)
      for (std::size_t c = 0; c < 3; ++c) rgb[(y * s.w + x) * 3 + c] = to_level(img(0, c, y, x));
  std::vector<std::uint8_t> out;
  PngFailure failure;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &failure, png_fail, png_warn_silent);
  if (!png) throw ImageError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ImageError("png: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageError(std::string("png: ") + failure.msg);
  }
  png_set_write_fn(png, &out, png_write_vec, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(s.w), static_cast<png_uint_32>(s.h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < s.h; ++y) png_write_row(png, rgb.data() + y * s.w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

Tensor4<float> decode_raw(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 20 || !std::equal(kRawMagic.begin(), kRawMagic.end(), bytes.begin()))
    throw ImageError("not an ERAF raw image");
  auto u32 = [&](std::size_t at) {
    return static_cast<std::size_t>(bytes[at] | bytes[at + 1] << 8 | bytes[at + 2] << 16 |
                                    static_cast<std::uint32_t>(bytes[at + 3]) << 24);
  };
  const Shape s{u32(4), u32(8), u32(12), u32(16)};
  if (s.numel() == 0 || bytes.size() != 20 + s.numel() * 4)
    throw ImageError("raw image: payload size does not match header " + s.str());
  Tensor4<float> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<float>(static_cast<std::uint32_t>(u32(20 + 4 * i)));
  return t;
}

std::vector<std::uint8_t> encode_raw(const Tensor4<float>& t) {
  std::vector<std::uint8_t> out(kRawMagic.begin(), kRawMagic.end());
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  const Shape s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) u32(static_cast<std::uint32_t>(d));
  for (float v : t.storage()) u32(std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor4<float> read_image(const std::filesystem::path& p) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(p);
  } catch (const Error& e) {
    throw ImageError(e.what());
  }
  try {
    return lower_ext(p) == ".eraf" ? decode_raw(bytes) : decode_png(bytes);
  } catch (const ImageError& e) {
    throw ImageError(p.string() + ": " + e.what());
  }
}

void write_image(const std::filesystem::path& p, const Tensor4<float>& img) {
  const auto bytes = lower_ext(p) == ".eraf" ? encode_raw(img) : encode_png(img);
  try {
    write_file_atomic(p, bytes);
  } catch (const std::exception& e) {
    throw ImageError("cannot write '" + p.string() + "': " + e.what());
  }
}

bool is_image_path(const std::filesystem::path& p) {
  const auto e = lower_ext(p);
  return e == ".png" || e == ".eraf";
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& p) {
  if (!std::filesystem::is_directory(p)) return {p};
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(p))
    if (entry.is_regular_file() && is_image_path(entry.path())) out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace eranet::io
