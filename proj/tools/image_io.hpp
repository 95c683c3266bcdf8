#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "eranet/tensor.hpp"

namespace eranet::io {

/// Undecodable or unwritable image data.
struct ImageError : Error {
  using Error::Error;
};

/// 8-bit level for a [0, 1] value: clamp, scale by 255, round half up.
std::uint8_t to_level(float v);

/// 8-bit RGB PNG (gray, palette, alpha and 16-bit inputs are converted).
Tensor4<float> decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Tensor4<float>& img);

/// Lossless "ERAF" container: magic, u32 n, c, h, w, little-endian f32 payload.
Tensor4<float> decode_raw(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_raw(const Tensor4<float>& t);

/// Picks the codec from the file extension (.png or .eraf).
Tensor4<float> read_image(const std::filesystem::path& p);
void write_image(const std::filesystem::path& p, const Tensor4<float>& img);

bool is_image_path(const std::filesystem::path& p);

/// Files in a directory with image extensions, sorted by name; a single file is
/// returned as is.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& p);

}  // namespace eranet::io
