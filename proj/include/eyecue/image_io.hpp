#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "eyecue/gaze_geometry.hpp"

namespace eyecue {

/// Packed frames: four little-endian uint32 (n, H, W, 3), then n*H*W*3
/// little-endian float32 values, row-major.
void write_packed_frames(const std::filesystem::path& path, std::span<const FrameImage> frames);
std::vector<FrameImage> read_packed_frames(const std::filesystem::path& path);

/// Binary PPM (P6, maxval 255).
FrameImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const FrameImage& frame);

/// 24-bit uncompressed BMP, the simplest format every browser renders.
std::string encode_bmp(const FrameImage& frame);

namespace le {

void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f32(std::string& out, float v);
std::uint32_t get_u32(const unsigned char* p);
std::uint64_t get_u64(const unsigned char* p);
float get_f32(const unsigned char* p);

}  // namespace le

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace eyecue
