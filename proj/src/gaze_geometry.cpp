#include "eyecue/gaze_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

#include "eyecue/errors.hpp"

namespace eyecue {

PatchGrid make_grid(int frame_height, int frame_width, int patch_size) {
  if (frame_height <= 0 || frame_width <= 0 || patch_size <= 0) {
    throw ValidationError("make_grid: dimensions must be positive (got " + std::to_string(frame_height) + "x" +
                          std::to_string(frame_width) + ", patch " + std::to_string(patch_size) + ")");
  }
  if (patch_size > std::min(frame_height, frame_width)) {
    throw ValidationError("make_grid: patch size " + std::to_string(patch_size) + " exceeds frame " +
                          std::to_string(frame_height) + "x" + std::to_string(frame_width));
  }
  PatchGrid grid;
  grid.frame_height = frame_height;
  grid.frame_width = frame_width;
  grid.patch_size = patch_size;
  grid.grid_rows = frame_height / patch_size;
  grid.grid_cols = frame_width / patch_size;
  return grid;
}

GazePoint GazePoint::clamped(double x, double y) {
  if (!std::isfinite(x) || !std::isfinite(y)) {
    throw ValidationError("gaze coordinates must be finite");
  }
  return GazePoint{std::clamp(x, 0.0, 1.0), std::clamp(y, 0.0, 1.0)};
}

PixelCoord gaze_pixel(GazePoint g, int frame_height, int frame_width) {
  const int px = static_cast<int>(std::floor(g.x * frame_width));
  const int py = static_cast<int>(std::floor(g.y * frame_height));
  return PixelCoord{std::clamp(px, 0, frame_width - 1), std::clamp(py, 0, frame_height - 1)};
}

int gaze_to_patch(const PatchGrid& grid, GazePoint g) {
  const int row = std::min(static_cast<int>(std::floor(g.y * grid.frame_height / grid.patch_size)),
                           grid.grid_rows - 1);
  const int col = std::min(static_cast<int>(std::floor(g.x * grid.frame_width / grid.patch_size)),
                           grid.grid_cols - 1);
  return grid.index(std::max(row, 0), std::max(col, 0));
}

bool is_valid_neighborhood_size(int h) { return h == 1 || h == 5 || h == 9 || h == 25; }

std::vector<int> select_patch_neighborhood(const PatchGrid& grid, GazePoint g, int h) {
  return select_patch_neighborhood(grid, gaze_to_patch(grid, g), h);
}

std::vector<int> select_patch_neighborhood(const PatchGrid& grid, int center_index, int h) {
  if (!is_valid_neighborhood_size(h)) {
    throw ValidationError("neighborhood size must be one of 1, 5, 9, 25 (got " + std::to_string(h) + ")");
  }
  if (grid.patch_count() < h) {
    throw ValidationError("grid has " + std::to_string(grid.patch_count()) + " patches, fewer than h=" +
                          std::to_string(h));
  }
  if (center_index < 0 || center_index >= grid.patch_count()) {
    throw ValidationError("patch index out of range");
  }
  const bool manhattan = (h == 5);
  const int r0 = grid.row_of(center_index);
  const int c0 = grid.col_of(center_index);

  std::vector<int> selected;
  selected.reserve(h);
  // Expand rings of equal distance; each ring is visited in (row, col) order.
  for (int dist = 0; static_cast<int>(selected.size()) < h; ++dist) {
    for (int dr = -dist; dr <= dist && static_cast<int>(selected.size()) < h; ++dr) {
      const int row = r0 + dr;
      if (row < 0 || row >= grid.grid_rows) continue;
      for (int dc = -dist; dc <= dist && static_cast<int>(selected.size()) < h; ++dc) {
        const int col = c0 + dc;
        if (col < 0 || col >= grid.grid_cols) continue;
        const int d = manhattan ? std::abs(dr) + std::abs(dc) : std::max(std::abs(dr), std::abs(dc));
        if (d != dist) continue;
        selected.push_back(grid.index(row, col));
      }
    }
  }
  return selected;
}

FrameImage render_dot_overlay(const FrameImage& frame, GazePoint g, double radius) {
  if (!(radius > 0.0)) throw ValidationError("dot radius must be positive");
  FrameImage out = frame;
  const PixelCoord c = gaze_pixel(g, frame.height, frame.width);
  const int reach = static_cast<int>(std::floor(radius));
  const double r2 = radius * radius;
  for (int y = std::max(0, c.y - reach); y <= std::min(frame.height - 1, c.y + reach); ++y) {
    for (int x = std::max(0, c.x - reach); x <= std::min(frame.width - 1, c.x + reach); ++x) {
      const double dx = x - c.x;
      const double dy = y - c.y;
      if (dx * dx + dy * dy <= r2) {
        out.at(y, x, 0) = 0.0f;
        out.at(y, x, 1) = 1.0f;
        out.at(y, x, 2) = 0.0f;
      }
    }
  }
  return out;
}

double heatmap_mask_weight(double distance, double radius, double floor) {
  const double sigma = radius / 2.0;
  return floor + (1.0 - floor) * std::exp(-(distance * distance) / (2.0 * sigma * sigma));
}

FrameImage render_heatmap_mask(const FrameImage& frame, GazePoint g, double radius, double floor) {
  if (!(radius > 0.0)) throw ValidationError("heatmap radius must be positive");
  if (!(floor >= 0.0 && floor <= 1.0)) throw ValidationError("heatmap floor must lie in [0, 1]");
  FrameImage out = frame;
  const PixelCoord c = gaze_pixel(g, frame.height, frame.width);
  const double sigma = radius / 2.0;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < frame.height; ++y) {
    const double dy = y - c.y;
    for (int x = 0; x < frame.width; ++x) {
      const double dx = x - c.x;
      const float m = static_cast<float>(floor + (1.0 - floor) * std::exp(-(dx * dx + dy * dy) * inv));
      for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) *= m;
    }
  }
  return out;
}

CropWindow gaze_crop_window(int frame_height, int frame_width, GazePoint g, int crop) {
  if (crop <= 0 || crop > std::min(frame_height, frame_width)) {
    throw ValidationError("crop size " + std::to_string(crop) + " does not fit frame " +
                          std::to_string(frame_height) + "x" + std::to_string(frame_width));
  }
  const PixelCoord c = gaze_pixel(g, frame_height, frame_width);
  CropWindow w;
  w.size = crop;
  w.x0 = std::clamp(c.x - crop / 2, 0, frame_width - crop);
  w.y0 = std::clamp(c.y - crop / 2, 0, frame_height - crop);
  return w;
}

FrameImage crop_gaze_centered(const FrameImage& frame, GazePoint g, int crop) {
  const CropWindow w = gaze_crop_window(frame.height, frame.width, g, crop);
  FrameImage out(crop, crop);
  for (int y = 0; y < crop; ++y) {
    const float* src = &frame.values[(static_cast<std::size_t>(w.y0 + y) * frame.width + w.x0) * 3];
    std::copy(src, src + static_cast<std::size_t>(crop) * 3, &out.values[static_cast<std::size_t>(y) * crop * 3]);
  }
  return out;
}

FrameImage resize_bilinear(const FrameImage& frame, int height, int width) {
  if (height <= 0 || width <= 0) throw ValidationError("resize target must be positive");
  if (frame.height == height && frame.width == width) return frame;
  FrameImage out(height, width);
  const double sy = static_cast<double>(frame.height) / height;
  const double sx = static_cast<double>(frame.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(frame.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, frame.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(frame.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, frame.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - wx) * frame.at(y0, x0, c) + wx * frame.at(y0, x1, c);
        const double bottom = (1 - wx) * frame.at(y1, x0, c) + wx * frame.at(y1, x1, c);
        out.at(y, x, c) = static_cast<float>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

std::string to_string(PreprocessMode mode) {
  switch (mode) {
    case PreprocessMode::kNone: return "none";
    case PreprocessMode::kDot: return "dot";
    case PreprocessMode::kHeatmap: return "heatmap";
    case PreprocessMode::kCrop: return "crop";
  }
  return "none";
}

PreprocessMode preprocess_mode_from_string(const std::string& name) {
  if (name == "none") return PreprocessMode::kNone;
  if (name == "dot") return PreprocessMode::kDot;
  if (name == "heatmap") return PreprocessMode::kHeatmap;
  if (name == "crop") return PreprocessMode::kCrop;
  throw ValidationError("unknown preprocessing mode '" + name + "' (allowed: none, dot, heatmap, crop)");
}

PreprocessedClip preprocess_clip(std::span<const FrameImage> frames, std::span<const GazePoint> gaze,
                                 const PreprocessSpec& spec, int size) {
  if (frames.size() != gaze.size()) {
    throw ValidationError("preprocess: " + std::to_string(frames.size()) + " frames but " +
                          std::to_string(gaze.size()) + " gaze points");
  }
  PreprocessedClip out;
  out.frames.reserve(frames.size());
  out.gaze_in_frame.reserve(gaze.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const FrameImage& raw = frames[t];
    const GazePoint g = gaze[t];
    switch (spec.mode) {
      case PreprocessMode::kNone:
        out.frames.push_back(resize_bilinear(raw, size, size));
        out.gaze_in_frame.push_back(g);
        break;
      case PreprocessMode::kDot:
        out.frames.push_back(resize_bilinear(render_dot_overlay(raw, g, spec.dot_radius), size, size));
        out.gaze_in_frame.push_back(g);
        break;
      case PreprocessMode::kHeatmap:
        out.frames.push_back(
            resize_bilinear(render_heatmap_mask(raw, g, spec.heatmap_radius, spec.heatmap_floor), size, size));
        out.gaze_in_frame.push_back(g);
        break;
      case PreprocessMode::kCrop: {
        const CropWindow w = gaze_crop_window(raw.height, raw.width, g, spec.crop_size);
        out.frames.push_back(resize_bilinear(crop_gaze_centered(raw, g, spec.crop_size), size, size));
        const double gx = (g.x * raw.width - w.x0) / w.size;
        const double gy = (g.y * raw.height - w.y0) / w.size;
        out.gaze_in_frame.push_back(GazePoint::clamped(gx, gy));
        break;
      }
    }
  }
  return out;
}

}  // namespace eyecue
