#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "eyecue/dataset.hpp"

namespace eyecue {

enum class ObjectKind { kRoadCenter, kLeadVehicle, kTrafficSign, kDistractor };

std::string to_string(ObjectKind kind);
bool is_task_relevant(ObjectKind kind);

/// A primitive moving in a straight line, reflected at the frame border.
/// Coordinates are continuous pixels (pixel (i, j) covers [i, i+1) x [j, j+1)).
struct SceneObject {
  ObjectKind kind = ObjectKind::kRoadCenter;
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;  // pixels per frame
  double vy = 0.0;
  double radius = 5.0;

  /// Center at frame t.
  std::pair<double, double> position(int t, int width, int height) const;
};

enum class GazePolicy { kAttentive, kDistracted };

struct SceneSpec {
  std::uint64_t layout_seed = 0;
  int width = 64;
  int height = 64;
  int frames = kClipFrames;
  std::vector<SceneObject> objects;
  Scene scene = Scene::kCity;
  TimeOfDay time_of_day = TimeOfDay::kDay;
  Weather weather = Weather::kSunny;
  GazePolicy policy = GazePolicy::kAttentive;
  int target = 0;             // index into objects that the gaze follows
  double gaze_jitter = 1.5;   // pixels, per-axis standard deviation

  void validate() const;
};

struct SceneOptions {
  int width = 64;
  int height = 64;
  int frames = kClipFrames;
  double object_radius = 5.0;
  double max_speed = 0.6;        // pixels per frame
  double min_separation = 20.0;  // between object centers, every frame
  double gaze_jitter = 1.5;
};

/// One object of each kind, positions and velocities drawn identically for
/// every kind. The attentive policy follows a uniformly chosen task-relevant
/// object, the distracted policy follows the distractor.
SceneSpec random_scene(std::uint64_t layout_seed, GazePolicy policy, Scene scene, TimeOfDay time, Weather weather,
                       const SceneOptions& options = {});

struct SynthClip {
  ClipRecord record;
  std::vector<FrameImage> frames;
};

/// Renders the frames and the jittered gaze track. Deterministic in `seed`.
SynthClip generate_clip(const SceneSpec& spec, std::uint64_t seed);

/// Fraction of frames whose gaze lies within `distance` pixels of some
/// task-relevant object's center (or of the distractor's, when false).
double gaze_on_target_fraction(const SceneSpec& spec, const GazeTrack& gaze, double distance,
                               bool task_relevant_targets);

struct ScenarioMix {
  std::map<Scene, double> scene;
  std::map<TimeOfDay, double> time_of_day;
  std::map<Weather, double> weather;
  std::map<SourceDataset, double> source;

  /// Tag frequencies of the real corpus's scenario breakdown.
  static ScenarioMix standard();
};

struct CorpusOptions {
  int count = 800;
  double distracted_fraction = 0.5;
  ScenarioMix mix = ScenarioMix::standard();
  std::uint64_t seed = 0;
  int clips_per_video = 8;
  SceneOptions scene;
  double cc_threshold = 0.3;
};

/// Labels and scenario tags are assigned by exact quotas (largest remainder)
/// and then shuffled, so proportions are met to within one clip. Clips are
/// grouped into videos of `clips_per_video`; tags are per video. Clips are
/// flagged against their video's density map.
std::vector<SynthClip> generate_corpus(const CorpusOptions& options);

/// Writes `<dir>/frames/<clip_id>.f32` and `<dir>/manifest.jsonl`.
void write_corpus(const std::filesystem::path& dir, std::vector<SynthClip>& clips);

}  // namespace eyecue
