#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace eyecue {

/// Frame-to-patch tessellation. Patch indices are row-major over
/// [0, grid_rows * grid_cols).
struct PatchGrid {
  int frame_height = 0;
  int frame_width = 0;
  int patch_size = 0;
  int grid_rows = 0;
  int grid_cols = 0;

  int patch_count() const { return grid_rows * grid_cols; }
  int index(int row, int col) const { return row * grid_cols + col; }
  int row_of(int index) const { return index / grid_cols; }
  int col_of(int index) const { return index % grid_cols; }

  bool operator==(const PatchGrid&) const = default;
};

PatchGrid make_grid(int frame_height, int frame_width, int patch_size);

/// Normalized gaze location; both coordinates live in [0, 1].
struct GazePoint {
  double x = 0.5;
  double y = 0.5;

  /// Clamps to [0, 1]; throws ValidationError for non-finite input.
  static GazePoint clamped(double x, double y);

  bool operator==(const GazePoint&) const = default;
};

using GazeTrack = std::vector<GazePoint>;

/// RGB image, interleaved, row-major, values in [0, 1].
struct FrameImage {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  FrameImage() = default;
  FrameImage(int h, int w, float fill = 0.0f)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w * 3, fill) {}

  float& at(int y, int x, int c) { return values[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return values[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  bool operator==(const FrameImage&) const = default;
};

/// Integer pixel containing the gaze point, clamped to the frame.
struct PixelCoord {
  int x = 0;
  int y = 0;
};

PixelCoord gaze_pixel(GazePoint g, int frame_height, int frame_width);

int gaze_to_patch(const PatchGrid& grid, GazePoint g);

/// The h patches nearest the gaze patch, ordered by (distance, row, col).
/// Distance is Manhattan for h = 5 and Chebyshev for h in {1, 9, 25}, which
/// gives center / plus-shaped cross / 3x3 / 5x5 windows away from borders
/// and still exactly h patches near them.
std::vector<int> select_patch_neighborhood(const PatchGrid& grid, GazePoint g, int h);
std::vector<int> select_patch_neighborhood(const PatchGrid& grid, int center_index, int h);

bool is_valid_neighborhood_size(int h);

FrameImage render_dot_overlay(const FrameImage& frame, GazePoint g, double radius);

/// Multiplies every pixel by floor + (1 - floor) * exp(-d^2 / (2 sigma^2)),
/// sigma = radius / 2, d measured from the gaze pixel.
FrameImage render_heatmap_mask(const FrameImage& frame, GazePoint g, double radius, double floor);

double heatmap_mask_weight(double distance, double radius, double floor);

struct CropWindow {
  int x0 = 0;
  int y0 = 0;
  int size = 0;
};

/// Square window centered on the gaze pixel, shifted to stay inside the frame.
CropWindow gaze_crop_window(int frame_height, int frame_width, GazePoint g, int crop);
FrameImage crop_gaze_centered(const FrameImage& frame, GazePoint g, int crop);

/// Bilinear resampling with pixel-center alignment.
FrameImage resize_bilinear(const FrameImage& frame, int height, int width);

enum class PreprocessMode { kNone, kDot, kHeatmap, kCrop };

std::string to_string(PreprocessMode mode);
PreprocessMode preprocess_mode_from_string(const std::string& name);

/// Gaze-guided frame preprocessing; lengths are raw-frame pixels.
struct PreprocessSpec {
  PreprocessMode mode = PreprocessMode::kNone;
  double dot_radius = 20.0;
  double heatmap_radius = 75.0;
  double heatmap_floor = 0.3;
  int crop_size = 448;

  bool operator==(const PreprocessSpec&) const = default;
};

struct PreprocessedClip {
  std::vector<FrameImage> frames;  // encoder resolution
  GazeTrack gaze_in_frame;         // gaze in the coordinates of `frames`
};

/// Applies the renderer to each raw frame at its own gaze point, then resizes
/// to size x size. Crop mode re-expresses the gaze inside the crop window.
PreprocessedClip preprocess_clip(std::span<const FrameImage> frames, std::span<const GazePoint> gaze,
                                 const PreprocessSpec& spec, int size);

}  // namespace eyecue
