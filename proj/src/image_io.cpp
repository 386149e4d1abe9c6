#include "eyecue/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "eyecue/errors.hpp"

namespace eyecue {

namespace le {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint64_t get_u64(const unsigned char* p) {
  return static_cast<std::uint64_t>(get_u32(p)) | (static_cast<std::uint64_t>(get_u32(p + 4)) << 32);
}

float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

}  // namespace le

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("short write to " + path.string());
}

void write_packed_frames(const std::filesystem::path& path, std::span<const FrameImage> frames) {
  if (frames.empty()) throw ValidationError("write_packed_frames: no frames");
  const int h = frames[0].height;
  const int w = frames[0].width;
  std::string bytes;
  bytes.reserve(16 + frames.size() * static_cast<std::size_t>(h) * w * 3 * 4);
  le::put_u32(bytes, static_cast<std::uint32_t>(frames.size()));
  le::put_u32(bytes, static_cast<std::uint32_t>(h));
  le::put_u32(bytes, static_cast<std::uint32_t>(w));
  le::put_u32(bytes, 3);
  for (const auto& f : frames) {
    if (f.height != h || f.width != w) throw ValidationError("write_packed_frames: frames differ in size");
    for (float v : f.values) {
      if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("write_packed_frames: pixel values must lie in [0, 1]");
      le::put_f32(bytes, v);
    }
  }
  write_file_bytes(path, bytes);
}

std::vector<FrameImage> read_packed_frames(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16) throw ValidationError(path.string() + ": truncated packed-frame header");
  const std::uint32_t n = le::get_u32(p);
  const std::uint32_t h = le::get_u32(p + 4);
  const std::uint32_t w = le::get_u32(p + 8);
  const std::uint32_t c = le::get_u32(p + 12);
  if (c != 3 || h == 0 || w == 0) throw ValidationError(path.string() + ": packed frames must be (n, H, W, 3)");
  const std::size_t count = static_cast<std::size_t>(n) * h * w * 3;
  if (bytes.size() != 16 + count * 4) {
    throw ValidationError(path.string() + ": size does not match shape (" + std::to_string(n) + ", " +
                          std::to_string(h) + ", " + std::to_string(w) + ", 3)");
  }
  std::vector<FrameImage> frames;
  frames.reserve(n);
  const unsigned char* data = p + 16;
  for (std::uint32_t f = 0; f < n; ++f) {
    FrameImage img(static_cast<int>(h), static_cast<int>(w));
    for (std::size_t i = 0; i < img.values.size(); ++i) {
      const float v = le::get_f32(data);
      data += 4;
      if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
        throw ValidationError(path.string() + ": frame values must be finite and in [0, 1]");
      }
      img.values[i] = v;
    }
    frames.push_back(std::move(img));
  }
  return frames;
}

FrameImage read_ppm(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  std::istringstream in(bytes);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw ValidationError(path.string() + ": not a binary PPM (P6)");
  auto next_int = [&in, &path]() {
    int v = 0;
    in >> std::ws;
    while (in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
      in >> std::ws;
    }
    if (!(in >> v)) throw ValidationError(path.string() + ": malformed PPM header");
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (w <= 0 || h <= 0 || maxval != 255) throw ValidationError(path.string() + ": unsupported PPM header");
  in.get();
  const std::size_t offset = static_cast<std::size_t>(in.tellg());
  const std::size_t count = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() < offset + count) throw ValidationError(path.string() + ": truncated PPM data");
  FrameImage img(h, w);
  for (std::size_t i = 0; i < count; ++i) {
    img.values[i] = static_cast<unsigned char>(bytes[offset + i]) / 255.0f;
  }
  return img;
}

namespace {

unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const FrameImage& frame) {
  std::string bytes = "P6\n" + std::to_string(frame.width) + " " + std::to_string(frame.height) + "\n255\n";
  for (float v : frame.values) bytes.push_back(static_cast<char>(to_byte(v)));
  write_file_bytes(path, bytes);
}

std::string encode_bmp(const FrameImage& frame) {
  const int row_bytes = (frame.width * 3 + 3) & ~3;
  const std::uint32_t data_size = static_cast<std::uint32_t>(row_bytes) * static_cast<std::uint32_t>(frame.height);
  std::string out = "BM";
  le::put_u32(out, 54 + data_size);
  le::put_u32(out, 0);
  le::put_u32(out, 54);
  le::put_u32(out, 40);
  le::put_u32(out, static_cast<std::uint32_t>(frame.width));
  le::put_u32(out, static_cast<std::uint32_t>(frame.height));
  out.push_back(1);
  out.push_back(0);
  out.push_back(24);
  out.push_back(0);
  le::put_u32(out, 0);
  le::put_u32(out, data_size);
  le::put_u32(out, 2835);
  le::put_u32(out, 2835);
  le::put_u32(out, 0);
  le::put_u32(out, 0);
  for (int y = frame.height - 1; y >= 0; --y) {
    for (int x = 0; x < frame.width; ++x) {
      out.push_back(static_cast<char>(to_byte(frame.at(y, x, 2))));
      out.push_back(static_cast<char>(to_byte(frame.at(y, x, 1))));
      out.push_back(static_cast<char>(to_byte(frame.at(y, x, 0))));
    }
    for (int pad = frame.width * 3; pad < row_bytes; ++pad) out.push_back(0);
  }
  return out;
}

}  // namespace eyecue
