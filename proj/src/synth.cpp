#include "eyecue/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "eyecue/errors.hpp"
#include "eyecue/image_io.hpp"
#include "eyecue/rng.hpp"

namespace eyecue {

namespace {

using Color = std::array<float, 3>;

Color object_color(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::kRoadCenter:
      return {0.95f, 0.95f, 0.95f};
    case ObjectKind::kLeadVehicle:
      return {0.85f, 0.12f, 0.1f};
    case ObjectKind::kTrafficSign:
      return {0.95f, 0.8f, 0.1f};
    case ObjectKind::kDistractor:
      return {0.85f, 0.2f, 0.85f};
  }
  return {0.0f, 0.0f, 0.0f};
}

bool is_disc(ObjectKind kind) { return kind == ObjectKind::kRoadCenter || kind == ObjectKind::kTrafficSign; }

double reflect(double start, double velocity, int t, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0.0) return lo;
  double u = std::fmod(start - lo + velocity * t, 2.0 * span);
  if (u < 0.0) u += 2.0 * span;
  if (u > span) u = 2.0 * span - u;
  return lo + u;
}

struct Backdrop {
  Color sky, ground, road;
  double top_half_width, bottom_half_width;
};

Backdrop backdrop(Scene scene) {
  switch (scene) {
    case Scene::kCity:
      return {{0.55f, 0.62f, 0.72f}, {0.5f, 0.48f, 0.46f}, {0.3f, 0.3f, 0.32f}, 3.0, 22.0};
    case Scene::kHighway:
      return {{0.5f, 0.68f, 0.88f}, {0.32f, 0.5f, 0.26f}, {0.28f, 0.28f, 0.3f}, 4.0, 30.0};
    case Scene::kRural:
      return {{0.58f, 0.72f, 0.86f}, {0.46f, 0.55f, 0.22f}, {0.4f, 0.36f, 0.3f}, 2.0, 14.0};
  }
  return {};
}

void blend(float* px, const Color& c, float amount) {
  for (int k = 0; k < 3; ++k) px[k] = px[k] * (1.0f - amount) + c[k] * amount;
}

void render_background(FrameImage& f, const SceneSpec& spec, const std::vector<std::array<int, 4>>& buildings) {
  const Backdrop b = backdrop(spec.scene);
  const int horizon = static_cast<int>(spec.height * 0.3);
  for (int y = 0; y < f.height; ++y) {
    const double depth = y < horizon ? 0.0 : static_cast<double>(y - horizon) / std::max(1, f.height - horizon);
    const double half = b.top_half_width + (b.bottom_half_width - b.top_half_width) * depth;
    for (int x = 0; x < f.width; ++x) {
      const Color* c = &b.sky;
      if (y >= horizon) c = std::abs(x + 0.5 - f.width / 2.0) <= half ? &b.road : &b.ground;
      for (int k = 0; k < 3; ++k) f.at(y, x, k) = (*c)[k];
    }
    if (y >= horizon && (y / 4) % 2 == 0) {
      const int cx = f.width / 2;
      for (int k = 0; k < 3; ++k) f.at(y, cx, k) = k == 2 ? 0.5f : 0.72f;
    }
  }
  for (const auto& [x0, y0, w, h] : buildings) {
    for (int y = y0; y < std::min(horizon, y0 + h); ++y) {
      for (int x = x0; x < std::min(f.width, x0 + w); ++x) {
        for (int k = 0; k < 3; ++k) f.at(y, x, k) = 0.38f + 0.04f * k;
      }
    }
  }
}

void render_object(FrameImage& f, const SceneObject& o, double cx, double cy) {
  const Color c = object_color(o.kind);
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - o.radius)));
  const int x1 = std::min(f.width - 1, static_cast<int>(std::ceil(cx + o.radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - o.radius)));
  const int y1 = std::min(f.height - 1, static_cast<int>(std::ceil(cy + o.radius)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      const bool inside = is_disc(o.kind) ? dx * dx + dy * dy <= o.radius * o.radius
                                          : std::abs(dx) <= o.radius && std::abs(dy) <= o.radius * 0.8;
      if (inside) {
        for (int k = 0; k < 3; ++k) f.at(y, x, k) = c[k];
      }
    }
  }
}

void apply_conditions(FrameImage& f, const SceneSpec& spec, Rng& rng) {
  Color gain{1.0f, 1.0f, 1.0f};
  if (spec.time_of_day == TimeOfDay::kEvening) gain = {1.0f, 0.82f, 0.62f};
  if (spec.time_of_day == TimeOfDay::kNight) gain = {0.5f, 0.52f, 0.62f};
  for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] *= gain[i % 3];

  if (spec.weather == Weather::kCloudy || spec.weather == Weather::kRainy) {
    const Color grey{0.5f, 0.5f, 0.52f};
    const float amount = spec.weather == Weather::kCloudy ? 0.25f : 0.2f;
    for (std::size_t p = 0; p < f.values.size(); p += 3) blend(&f.values[p], grey, amount);
  }
  if (spec.weather == Weather::kRainy) {
    const Color streak{0.8f, 0.82f, 0.9f};
    const int count = f.width * f.height / 128;
    for (int s = 0; s < count; ++s) {
      int x = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(f.width)));
      int y = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(f.height)));
      for (int k = 0; k < 4 && x < f.width && y < f.height; ++k, ++x, y += 2) blend(&f.values[(y * f.width + x) * 3], streak, 0.3f);
    }
  }
  for (float& v : f.values) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

std::string to_string(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::kRoadCenter:
      return "road_center";
    case ObjectKind::kLeadVehicle:
      return "lead_vehicle";
    case ObjectKind::kTrafficSign:
      return "traffic_sign";
    case ObjectKind::kDistractor:
      return "distractor";
  }
  return "?";
}

bool is_task_relevant(ObjectKind kind) { return kind != ObjectKind::kDistractor; }

std::pair<double, double> SceneObject::position(int t, int width, int height) const {
  return {reflect(x, vx, t, radius, width - radius), reflect(y, vy, t, radius, height - radius)};
}

void SceneSpec::validate() const {
  if (width <= 0 || height <= 0 || frames <= 0) throw ValidationError("scene: dimensions must be positive");
  if (objects.empty()) throw ValidationError("scene: no objects");
  if (target < 0 || target >= static_cast<int>(objects.size())) throw ValidationError("scene: target out of range");
  const bool target_relevant = is_task_relevant(objects[static_cast<std::size_t>(target)].kind);
  if ((policy == GazePolicy::kAttentive) != target_relevant) {
    throw ValidationError("scene: gaze policy does not match the target object");
  }
  if (!(gaze_jitter >= 0.0)) throw ValidationError("scene: gaze jitter must be >= 0");
  for (const auto& o : objects) {
    if (!(o.radius > 0.0) || 2 * o.radius >= std::min(width, height)) {
      throw ValidationError("scene: object radius does not fit the frame");
    }
  }
}

SceneSpec random_scene(std::uint64_t layout_seed, GazePolicy policy, Scene scene, TimeOfDay time, Weather weather,
                       const SceneOptions& options) {
  SceneSpec spec;
  spec.layout_seed = layout_seed;
  spec.width = options.width;
  spec.height = options.height;
  spec.frames = options.frames;
  spec.scene = scene;
  spec.time_of_day = time;
  spec.weather = weather;
  spec.policy = policy;
  spec.gaze_jitter = options.gaze_jitter;

  Rng rng(layout_seed);
  const double r = options.object_radius;
  constexpr std::array kinds{ObjectKind::kRoadCenter, ObjectKind::kLeadVehicle, ObjectKind::kTrafficSign,
                             ObjectKind::kDistractor};
  constexpr int kMaxAttempts = 10000;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxAttempts) throw ValidationError("scene: cannot place objects with the requested separation");
    spec.objects.clear();
    for (ObjectKind kind : kinds) {
      SceneObject o;
      o.kind = kind;
      o.radius = r;
      o.x = r + uniform01(rng) * (options.width - 2 * r);
      o.y = r + uniform01(rng) * (options.height - 2 * r);
      o.vx = (2.0 * uniform01(rng) - 1.0) * options.max_speed;
      o.vy = (2.0 * uniform01(rng) - 1.0) * options.max_speed;
      spec.objects.push_back(o);
    }
    bool ok = true;
    for (int t = 0; t < options.frames && ok; ++t) {
      for (std::size_t a = 0; a < spec.objects.size() && ok; ++a) {
        const auto [ax, ay] = spec.objects[a].position(t, options.width, options.height);
        for (std::size_t b = a + 1; b < spec.objects.size() && ok; ++b) {
          const auto [bx, by] = spec.objects[b].position(t, options.width, options.height);
          ok = std::hypot(ax - bx, ay - by) >= options.min_separation;
        }
      }
    }
    if (ok) break;
  }
  spec.target = policy == GazePolicy::kDistracted ? 3 : static_cast<int>(uniform_index(rng, 3));
  spec.validate();
  return spec;
}

SynthClip generate_clip(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::vector<std::array<int, 4>> buildings;
  if (spec.scene == Scene::kCity) {
    const int horizon = static_cast<int>(spec.height * 0.3);
    for (int x = 0; x < spec.width;) {
      const int w = 4 + static_cast<int>(uniform_index(rng, 6));
      const int h = 2 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(std::max(1, horizon - 2))));
      buildings.push_back({x, horizon - h, w, h});
      x += w + 1 + static_cast<int>(uniform_index(rng, 3));
    }
  }

  SynthClip clip;
  const auto& target = spec.objects[static_cast<std::size_t>(spec.target)];
  for (int t = 0; t < spec.frames; ++t) {
    FrameImage f(spec.height, spec.width);
    render_background(f, spec, buildings);
    for (const auto& o : spec.objects) {
      const auto [cx, cy] = o.position(t, spec.width, spec.height);
      render_object(f, o, cx, cy);
    }
    apply_conditions(f, spec, rng);
    clip.frames.push_back(std::move(f));

    const auto [tx, ty] = target.position(t, spec.width, spec.height);
    double gx = tx, gy = ty;
    if (spec.gaze_jitter > 0.0) {
      gx += spec.gaze_jitter * standard_normal(rng);
      gy += spec.gaze_jitter * standard_normal(rng);
    }
    clip.record.gaze.push_back(GazePoint::clamped(gx / spec.width, gy / spec.height));
  }
  clip.record.scene = spec.scene;
  clip.record.time_of_day = spec.time_of_day;
  clip.record.weather = spec.weather;
  clip.record.source = SourceDataset::kSynthetic;
  clip.record.label = spec.policy == GazePolicy::kAttentive ? Label::kAttentive : Label::kDistracted;
  return clip;
}

double gaze_on_target_fraction(const SceneSpec& spec, const GazeTrack& gaze, double distance,
                               bool task_relevant_targets) {
  if (gaze.empty()) return 0.0;
  int hits = 0;
  for (std::size_t t = 0; t < gaze.size(); ++t) {
    const double gx = gaze[t].x * spec.width;
    const double gy = gaze[t].y * spec.height;
    for (const auto& o : spec.objects) {
      if (is_task_relevant(o.kind) != task_relevant_targets) continue;
      const auto [cx, cy] = o.position(static_cast<int>(t), spec.width, spec.height);
      if (std::hypot(gx - cx, gy - cy) <= distance) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(gaze.size());
}

ScenarioMix ScenarioMix::standard() {
  ScenarioMix m;
  m.scene = {{Scene::kCity, 0.76}, {Scene::kHighway, 0.10}, {Scene::kRural, 0.14}};
  m.time_of_day = {{TimeOfDay::kDay, 0.756}, {TimeOfDay::kEvening, 0.091}, {TimeOfDay::kNight, 0.153}};
  m.weather = {{Weather::kSunny, 0.523}, {Weather::kCloudy, 0.304}, {Weather::kRainy, 0.174}};
  m.source = {{SourceDataset::kSynthetic, 1.0}};
  return m;
}

namespace {

template <typename E>
std::vector<E> quota_sequence(const std::map<E, double>& weights, int total, Rng& rng, const char* axis) {
  if (weights.empty()) throw ValidationError(std::string("scenario mix: no ") + axis + " weights");
  std::vector<double> w;
  std::vector<E> keys;
  for (const auto& [k, v] : weights) {
    if (!(v >= 0.0)) throw ValidationError(std::string("scenario mix: negative ") + axis + " weight");
    keys.push_back(k);
    w.push_back(v);
  }
  const std::vector<int> counts = largest_remainder(w, total);
  std::vector<E> out;
  for (std::size_t i = 0; i < keys.size(); ++i) out.insert(out.end(), static_cast<std::size_t>(counts[i]), keys[i]);
  shuffle_in_place(out, rng);
  return out;
}

std::string numbered(const char* prefix, int i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, i);
  return buf;
}

}  // namespace

std::vector<SynthClip> generate_corpus(const CorpusOptions& options) {
  if (options.count < 2) throw ValidationError("generate_corpus: count must be at least 2");
  if (!(options.distracted_fraction >= 0.0 && options.distracted_fraction <= 1.0)) {
    throw ValidationError("generate_corpus: distracted fraction must be in [0, 1]");
  }
  if (options.clips_per_video < 1) throw ValidationError("generate_corpus: clips_per_video must be >= 1");

  Rng rng(derive_seed(options.seed, 0xC0));
  const double f = options.distracted_fraction;
  std::vector<double> label_weights{1.0 - f, f};
  if (f == 0.0 || f == 1.0) label_weights = {f == 0.0 ? 1.0 : 0.0, f};
  const std::vector<int> label_counts = largest_remainder(label_weights, options.count);
  std::vector<GazePolicy> policies(static_cast<std::size_t>(label_counts[0]), GazePolicy::kAttentive);
  policies.insert(policies.end(), static_cast<std::size_t>(label_counts[1]), GazePolicy::kDistracted);
  shuffle_in_place(policies, rng);

  const int videos = (options.count + options.clips_per_video - 1) / options.clips_per_video;
  const auto scenes = quota_sequence(options.mix.scene, videos, rng, "scene");
  const auto times = quota_sequence(options.mix.time_of_day, videos, rng, "time_of_day");
  const auto weathers = quota_sequence(options.mix.weather, videos, rng, "weather");
  const auto sources = quota_sequence(options.mix.source, videos, rng, "source");

  std::vector<SynthClip> clips;
  clips.reserve(static_cast<std::size_t>(options.count));
  for (int i = 0; i < options.count; ++i) {
    const int v = i / options.clips_per_video;
    const auto vi = static_cast<std::size_t>(v);
    const std::uint64_t clip_seed = derive_seed(options.seed, 0x10000 + static_cast<std::uint64_t>(i));
    const SceneSpec spec = random_scene(derive_seed(clip_seed, 1), policies[static_cast<std::size_t>(i)], scenes[vi],
                                        times[vi], weathers[vi], options.scene);
    SynthClip clip = generate_clip(spec, derive_seed(clip_seed, 2));
    clip.record.clip_id = numbered("syn_", i, 5);
    clip.record.video_id = numbered("synv_", v, 4);
    clip.record.source = sources[vi];
    clips.push_back(std::move(clip));
  }

  std::vector<ClipRecord> records;
  for (const auto& c : clips) records.push_back(c.record);
  flag_by_video(records, options.cc_threshold);
  for (std::size_t i = 0; i < clips.size(); ++i) clips[i].record = std::move(records[i]);
  return clips;
}

void write_corpus(const std::filesystem::path& dir, std::vector<SynthClip>& clips) {
  std::vector<ClipRecord> records;
  for (auto& c : clips) {
    c.record.packed_frames = "frames/" + c.record.clip_id + ".f32";
    c.record.frame_paths.clear();
    write_packed_frames(dir / c.record.packed_frames, c.frames);
    records.push_back(c.record);
  }
  write_manifest(records, dir / "manifest.jsonl");
}

}  // namespace eyecue
