#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eyecue/gaze_geometry.hpp"

namespace eyecue {

inline constexpr int kClipFrames = 16;

enum class SourceDataset { kDrEyeVE, kBddA, kDada2000, kTrafficGaze, kSynthetic };
enum class Scene { kCity, kHighway, kRural };
enum class TimeOfDay { kDay, kEvening, kNight };
enum class Weather { kSunny, kCloudy, kRainy };
enum class Label { kUnlabeled, kAttentive, kDistracted, kErroneous };

std::string to_string(SourceDataset v);
std::string to_string(Scene v);
std::string to_string(TimeOfDay v);
std::string to_string(Weather v);
std::string to_string(Label v);

// Parsers throw ValidationError listing the allowed values.
SourceDataset source_dataset_from_string(const std::string& s);
Scene scene_from_string(const std::string& s);
TimeOfDay time_of_day_from_string(const std::string& s);
Weather weather_from_string(const std::string& s);
Label label_from_string(const std::string& s);

/// Class index for the model, or -1 for erroneous / unlabeled.
int class_index(Label label);

struct ClipRecord {
  std::string clip_id;
  std::string video_id;
  SourceDataset source = SourceDataset::kSynthetic;
  Scene scene = Scene::kCity;
  TimeOfDay time_of_day = TimeOfDay::kDay;
  Weather weather = Weather::kSunny;
  // Either one path per frame, or a single packed-tensor file.
  std::vector<std::string> frame_paths;
  std::string packed_frames;
  GazeTrack gaze;
  std::optional<double> cc;
  bool flagged = false;
  bool degenerate = false;
  Label label = Label::kUnlabeled;

  bool operator==(const ClipRecord&) const = default;
};

/// Frames of a clip, resolved against the manifest directory.
std::vector<FrameImage> load_frames(const ClipRecord& clip, const std::filesystem::path& base_dir);

// ---- segmentation ---------------------------------------------------------

struct GazeSample {
  double frame_index = 0.0;  // may be fractional for high-rate trackers
  GazePoint point;
};

/// Header `frame_index,x,y` required; coordinates clamped to [0, 1].
std::vector<GazeSample> read_gaze_csv(const std::filesystem::path& path);

struct SegmentResult {
  std::vector<ClipRecord> clips;
  int discarded_frames = 0;
  std::vector<std::string> warnings;
};

/// Non-overlapping windows of n frames, trailing remainder dropped. Each
/// frame takes the gaze sample nearest in time (earlier on ties). Metadata
/// other than frames and gaze is copied from `metadata`; clip ids are
/// `<video_id>_<window index>`.
SegmentResult segment_clips(const std::vector<std::string>& frame_paths, std::span<const GazeSample> gaze, int n,
                            const ClipRecord& metadata);

// ---- density maps and CC flagging ----------------------------------------

struct DensityMapSpec {
  int width = 64;
  int height = 36;
  double sigma = 1.5;  // cells

  bool operator==(const DensityMapSpec&) const = default;
};

struct DensityMap {
  int width = 0;
  int height = 0;
  std::vector<double> cells;  // row-major, height x width

  double at(int row, int col) const { return cells[static_cast<std::size_t>(row) * width + col]; }
  double sum() const;
};

/// Gaussian splat per point (cell centers at i + 0.5, truncated at 4 sigma),
/// normalized to sum 1. No points gives an all-zero map.
DensityMap density_map(std::span<const GazePoint> points, const DensityMapSpec& spec = {});

struct PearsonResult {
  double value = 0.0;
  bool degenerate = false;  // one of the maps has zero variance
};

PearsonResult pearson_cc(const DensityMap& a, const DensityMap& b);
PearsonResult pearson_cc(std::span<const double> a, std::span<const double> b);

enum class WholeVideoRule { kMeanOfClipMaps, kAllPoints };

WholeVideoRule whole_video_rule_from_string(const std::string& s);
std::string to_string(WholeVideoRule rule);

DensityMap whole_video_map(std::span<const ClipRecord> clips, const DensityMapSpec& spec = {},
                           WholeVideoRule rule = WholeVideoRule::kMeanOfClipMaps);

/// The review rule: degenerate, or cc strictly below the threshold.
inline bool is_flag_candidate(const PearsonResult& cc, double threshold) {
  return cc.degenerate || cc.value < threshold;
}

/// Sets cc and flagged (cc < threshold, strict) on every clip. Degenerate
/// clips get cc 0 and are flagged for review.
void flag_candidates(std::span<ClipRecord> clips, const DensityMap& whole_video, double threshold = 0.3,
                     const DensityMapSpec& spec = {});

/// Groups by video_id and flags each group against its own whole-video map.
void flag_by_video(std::span<ClipRecord> clips, double threshold = 0.3, const DensityMapSpec& spec = {},
                   WholeVideoRule rule = WholeVideoRule::kMeanOfClipMaps);

// ---- balancing ------------------------------------------------------------

struct SplitResult {
  std::vector<ClipRecord> train;
  std::vector<ClipRecord> test;
  std::map<SourceDataset, int> attentive_quota;  // attentive clips drawn per source
  int distracted_count = 0;
};

/// Keeps every distracted clip, draws as many attentive clips with per-source
/// quotas proportional to the attentive pool (largest remainder), then splits
/// each class floor(0.7 D) / rest. Erroneous and unlabeled clips are dropped.
SplitResult balance_and_split(std::span<const ClipRecord> clips, std::uint64_t seed, double train_fraction = 0.7);

/// Largest-remainder apportionment of `total` over `weights`.
std::vector<int> largest_remainder(std::span<const double> weights, int total);

// ---- manifests ------------------------------------------------------------

nlohmann::json to_json(const ClipRecord& clip);
/// Throws ValidationError; `frames` is the expected clip length.
ClipRecord clip_from_json(const nlohmann::json& j, int frames = kClipFrames);

void write_manifest(std::span<const ClipRecord> clips, const std::filesystem::path& path);
std::string manifest_text(std::span<const ClipRecord> clips);
/// Errors name the offending line: "<path>:<line>: ...".
std::vector<ClipRecord> read_manifest(const std::filesystem::path& path, int frames = kClipFrames);
std::vector<ClipRecord> parse_manifest(const std::string& text, const std::string& source_name,
                                       int frames = kClipFrames);

}  // namespace eyecue
