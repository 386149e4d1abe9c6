#include "eyecue/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "eyecue/errors.hpp"
#include "eyecue/image_io.hpp"
#include "eyecue/json_util.hpp"
#include "eyecue/rng.hpp"

namespace eyecue {

namespace {

template <typename E, std::size_t N>
using NameTable = std::array<std::pair<E, const char*>, N>;

constexpr NameTable<SourceDataset, 5> kSources{{{SourceDataset::kDrEyeVE, "DR(eye)VE"},
                                                {SourceDataset::kBddA, "BDD-A"},
                                                {SourceDataset::kDada2000, "DADA-2000"},
                                                {SourceDataset::kTrafficGaze, "TrafficGaze"},
                                                {SourceDataset::kSynthetic, "synthetic"}}};
constexpr NameTable<Scene, 3> kScenes{{{Scene::kCity, "city"}, {Scene::kHighway, "highway"}, {Scene::kRural, "rural"}}};
constexpr NameTable<TimeOfDay, 3> kTimes{
    {{TimeOfDay::kDay, "day"}, {TimeOfDay::kEvening, "evening"}, {TimeOfDay::kNight, "night"}}};
constexpr NameTable<Weather, 3> kWeathers{
    {{Weather::kSunny, "sunny"}, {Weather::kCloudy, "cloudy"}, {Weather::kRainy, "rainy"}}};
constexpr NameTable<Label, 4> kLabels{{{Label::kUnlabeled, "unlabeled"},
                                       {Label::kAttentive, "attentive"},
                                       {Label::kDistracted, "distracted"},
                                       {Label::kErroneous, "erroneous"}}};

template <typename E, std::size_t N>
std::string name_of(const NameTable<E, N>& table, E v) {
  for (const auto& [e, name] : table) {
    if (e == v) return name;
  }
  throw std::logic_error("unnamed enum value");
}

template <typename E, std::size_t N>
E parse_name(const NameTable<E, N>& table, const std::string& s, const char* what) {
  std::string allowed;
  for (const auto& [e, name] : table) {
    if (s == name) return e;
    allowed += (allowed.empty() ? "" : ", ") + std::string(name);
  }
  throw ValidationError(std::string("unknown ") + what + " '" + s + "' (allowed: " + allowed + ")");
}

}  // namespace

std::string to_string(SourceDataset v) { return name_of(kSources, v); }
std::string to_string(Scene v) { return name_of(kScenes, v); }
std::string to_string(TimeOfDay v) { return name_of(kTimes, v); }
std::string to_string(Weather v) { return name_of(kWeathers, v); }
std::string to_string(Label v) { return name_of(kLabels, v); }

SourceDataset source_dataset_from_string(const std::string& s) { return parse_name(kSources, s, "source_dataset"); }
Scene scene_from_string(const std::string& s) { return parse_name(kScenes, s, "scene"); }
TimeOfDay time_of_day_from_string(const std::string& s) { return parse_name(kTimes, s, "time_of_day"); }
Weather weather_from_string(const std::string& s) { return parse_name(kWeathers, s, "weather"); }
Label label_from_string(const std::string& s) { return parse_name(kLabels, s, "label"); }

int class_index(Label label) {
  switch (label) {
    case Label::kAttentive:
      return 0;
    case Label::kDistracted:
      return 1;
    default:
      return -1;
  }
}

std::vector<FrameImage> load_frames(const ClipRecord& clip, const std::filesystem::path& base_dir) {
  auto resolve = [&base_dir](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  std::vector<FrameImage> frames;
  if (!clip.packed_frames.empty()) {
    frames = read_packed_frames(resolve(clip.packed_frames));
  } else {
    for (const auto& p : clip.frame_paths) frames.push_back(read_ppm(resolve(p)));
  }
  if (frames.size() != clip.gaze.size()) {
    throw ValidationError("clip " + clip.clip_id + ": " + std::to_string(frames.size()) + " frames but " +
                          std::to_string(clip.gaze.size()) + " gaze points");
  }
  for (const auto& f : frames) {
    if (f.height != frames[0].height || f.width != frames[0].width) {
      throw ValidationError("clip " + clip.clip_id + ": frames differ in size");
    }
  }
  return frames;
}

// ---- segmentation ---------------------------------------------------------

std::vector<GazeSample> read_gaze_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty gaze file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::string header;
  for (char c : line) {
    if (c != ' ') header.push_back(c);
  }
  if (header != "frame_index,x,y") {
    throw ValidationError(path.string() + ":1: expected header 'frame_index,x,y'");
  }
  std::vector<GazeSample> samples;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream fields(line);
    std::array<double, 3> v{};
    for (int i = 0; i < 3; ++i) {
      std::string cell;
      if (!std::getline(fields, cell, ',')) {
        throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
      }
      try {
        std::size_t used = 0;
        v[i] = std::stod(cell, &used);
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": not a number: '" + cell + "'");
      }
    }
    std::string extra;
    if (std::getline(fields, extra)) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
    }
    if (!std::isfinite(v[0]) || v[0] < 0.0) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": frame_index must be >= 0");
    }
    try {
      samples.push_back({v[0], GazePoint::clamped(v[1], v[2])});
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return samples;
}

SegmentResult segment_clips(const std::vector<std::string>& frame_paths, std::span<const GazeSample> gaze, int n,
                            const ClipRecord& metadata) {
  if (n <= 0) throw ValidationError("segment_clips: frames per clip must be positive");
  SegmentResult result;
  const int total = static_cast<int>(frame_paths.size());
  const int windows = total / n;
  result.discarded_frames = total - windows * n;
  if (windows == 0) {
    result.warnings.push_back("video " + metadata.video_id + " has " + std::to_string(total) +
                              " frames, fewer than " + std::to_string(n) + "; no clips emitted");
    return result;
  }
  if (gaze.empty()) throw ValidationError("segment_clips: gaze stream is empty");

  std::vector<GazeSample> sorted(gaze.begin(), gaze.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const GazeSample& a, const GazeSample& b) { return a.frame_index < b.frame_index; });
  auto nearest = [&sorted](int frame) {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), static_cast<double>(frame),
                               [](const GazeSample& s, double f) { return s.frame_index < f; });
    if (it == sorted.end()) return sorted.back().point;
    if (it == sorted.begin()) return it->point;
    auto before = std::prev(it);
    // Ties go to the earlier sample.
    return (frame - before->frame_index <= it->frame_index - frame) ? before->point : it->point;
  };

  for (int w = 0; w < windows; ++w) {
    ClipRecord clip = metadata;
    clip.clip_id = metadata.video_id + "_" + std::to_string(w);
    clip.packed_frames.clear();
    clip.frame_paths.assign(frame_paths.begin() + w * n, frame_paths.begin() + (w + 1) * n);
    clip.gaze.clear();
    for (int f = w * n; f < (w + 1) * n; ++f) clip.gaze.push_back(nearest(f));
    clip.cc.reset();
    clip.flagged = false;
    clip.degenerate = false;
    result.clips.push_back(std::move(clip));
  }
  if (result.discarded_frames > 0) {
    result.warnings.push_back("video " + metadata.video_id + ": discarded " +
                              std::to_string(result.discarded_frames) + " trailing frames");
  }
  return result;
}

// ---- density maps ---------------------------------------------------------

double DensityMap::sum() const { return std::accumulate(cells.begin(), cells.end(), 0.0); }

DensityMap density_map(std::span<const GazePoint> points, const DensityMapSpec& spec) {
  if (spec.width <= 0 || spec.height <= 0) throw ValidationError("density_map: dimensions must be positive");
  if (!(spec.sigma > 0.0)) throw ValidationError("density_map: sigma must be positive");
  DensityMap map{spec.width, spec.height, std::vector<double>(static_cast<std::size_t>(spec.width) * spec.height)};
  const double cutoff = 4.0 * spec.sigma;
  const double inv = 1.0 / (2.0 * spec.sigma * spec.sigma);
  for (const GazePoint& g : points) {
    const double px = g.x * spec.width;
    const double py = g.y * spec.height;
    const int c0 = std::max(0, static_cast<int>(std::floor(px - cutoff - 0.5)));
    const int c1 = std::min(spec.width - 1, static_cast<int>(std::ceil(px + cutoff - 0.5)));
    const int r0 = std::max(0, static_cast<int>(std::floor(py - cutoff - 0.5)));
    const int r1 = std::min(spec.height - 1, static_cast<int>(std::ceil(py + cutoff - 0.5)));
    for (int r = r0; r <= r1; ++r) {
      const double dy = r + 0.5 - py;
      for (int c = c0; c <= c1; ++c) {
        const double dx = c + 0.5 - px;
        const double d2 = dx * dx + dy * dy;
        if (d2 <= cutoff * cutoff) map.cells[static_cast<std::size_t>(r) * spec.width + c] += std::exp(-d2 * inv);
      }
    }
  }
  const double total = map.sum();
  if (total > 0.0) {
    for (double& v : map.cells) v /= total;
  }
  return map;
}

PearsonResult pearson_cc(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("pearson_cc: maps differ in size");
  if (a.empty()) throw ValidationError("pearson_cc: empty maps");
  const double n = static_cast<double>(a.size());
  const double mean_a = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mean_b = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return {0.0, true};
  return {std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0), false};
}

PearsonResult pearson_cc(const DensityMap& a, const DensityMap& b) {
  if (a.width != b.width || a.height != b.height) throw ValidationError("pearson_cc: maps differ in dimensions");
  return pearson_cc(std::span<const double>(a.cells), std::span<const double>(b.cells));
}

WholeVideoRule whole_video_rule_from_string(const std::string& s) {
  if (s == "mean-of-clips") return WholeVideoRule::kMeanOfClipMaps;
  if (s == "all-points") return WholeVideoRule::kAllPoints;
  throw ValidationError("unknown whole-video rule '" + s + "' (allowed: mean-of-clips, all-points)");
}

std::string to_string(WholeVideoRule rule) {
  return rule == WholeVideoRule::kMeanOfClipMaps ? "mean-of-clips" : "all-points";
}

DensityMap whole_video_map(std::span<const ClipRecord> clips, const DensityMapSpec& spec, WholeVideoRule rule) {
  if (clips.empty()) throw ValidationError("whole_video_map: no clips");
  if (rule == WholeVideoRule::kAllPoints) {
    GazeTrack all;
    for (const auto& c : clips) all.insert(all.end(), c.gaze.begin(), c.gaze.end());
    return density_map(all, spec);
  }
  DensityMap mean{spec.width, spec.height, std::vector<double>(static_cast<std::size_t>(spec.width) * spec.height)};
  for (const auto& c : clips) {
    const DensityMap m = density_map(c.gaze, spec);
    for (std::size_t i = 0; i < mean.cells.size(); ++i) mean.cells[i] += m.cells[i];
  }
  const double total = mean.sum();
  if (total > 0.0) {
    for (double& v : mean.cells) v /= total;
  }
  return mean;
}

void flag_candidates(std::span<ClipRecord> clips, const DensityMap& whole_video, double threshold,
                     const DensityMapSpec& spec) {
  for (ClipRecord& clip : clips) {
    const PearsonResult r = pearson_cc(density_map(clip.gaze, spec), whole_video);
    clip.cc = r.value;
    clip.degenerate = r.degenerate;
    clip.flagged = is_flag_candidate(r, threshold);
  }
}

void flag_by_video(std::span<ClipRecord> clips, double threshold, const DensityMapSpec& spec, WholeVideoRule rule) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < clips.size(); ++i) groups[clips[i].video_id].push_back(i);
  for (const auto& [video, members] : groups) {
    std::vector<ClipRecord> group;
    for (std::size_t i : members) group.push_back(clips[i]);
    const DensityMap whole = whole_video_map(group, spec, rule);
    flag_candidates(group, whole, threshold, spec);
    for (std::size_t k = 0; k < members.size(); ++k) clips[members[k]] = std::move(group[k]);
  }
}

// ---- balancing ------------------------------------------------------------

std::vector<int> largest_remainder(std::span<const double> weights, int total) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (weights.empty() || !(sum > 0.0)) throw ValidationError("largest_remainder: weights must have positive sum");
  std::vector<int> out(weights.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  int assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0) throw ValidationError("largest_remainder: negative weight");
    const double exact = total * weights[i] / sum;
    out[i] = static_cast<int>(std::floor(exact));
    assigned += out[i];
    remainders.push_back({exact - out[i], i});
  }
  // Larger remainder first, then lower index.
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < total - assigned; ++k) ++out[remainders[static_cast<std::size_t>(k)].second];
  return out;
}

SplitResult balance_and_split(std::span<const ClipRecord> clips, std::uint64_t seed, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("balance_and_split: train fraction must be in (0, 1)");
  }
  std::vector<const ClipRecord*> distracted;
  std::map<SourceDataset, std::vector<const ClipRecord*>> attentive;
  std::size_t attentive_total = 0;
  for (const auto& c : clips) {
    if (c.label == Label::kDistracted) {
      distracted.push_back(&c);
    } else if (c.label == Label::kAttentive) {
      attentive[c.source].push_back(&c);
      ++attentive_total;
    }
  }
  const int d = static_cast<int>(distracted.size());
  if (d == 0) throw ValidationError("balance_and_split: no distracted clips");
  if (static_cast<std::size_t>(d) > attentive_total) {
    throw ValidationError("balance_and_split: " + std::to_string(d) + " distracted clips but only " +
                          std::to_string(attentive_total) + " attentive");
  }

  SplitResult result;
  result.distracted_count = d;
  std::vector<double> weights;
  for (const auto& [source, members] : attentive) weights.push_back(static_cast<double>(members.size()));
  const std::vector<int> quotas = largest_remainder(weights, d);

  Rng rng(derive_seed(seed, 0xBA1A));
  std::vector<const ClipRecord*> chosen_attentive;
  std::size_t k = 0;
  for (auto& [source, members] : attentive) {
    std::vector<const ClipRecord*> pool = members;
    shuffle_in_place(pool, rng);
    pool.resize(static_cast<std::size_t>(quotas[k]));
    result.attentive_quota[source] = quotas[k];
    chosen_attentive.insert(chosen_attentive.end(), pool.begin(), pool.end());
    ++k;
  }

  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * d));
  for (auto* group : {&distracted, &chosen_attentive}) {
    shuffle_in_place(*group, rng);
    for (std::size_t i = 0; i < group->size(); ++i) {
      (i < n_train ? result.train : result.test).push_back(*(*group)[i]);
    }
  }
  return result;
}

// ---- manifests ------------------------------------------------------------

nlohmann::json to_json(const ClipRecord& clip) {
  nlohmann::json j;
  j["clip_id"] = clip.clip_id;
  j["video_id"] = clip.video_id;
  j["source_dataset"] = to_string(clip.source);
  j["scene"] = to_string(clip.scene);
  j["time_of_day"] = to_string(clip.time_of_day);
  j["weather"] = to_string(clip.weather);
  if (!clip.packed_frames.empty()) {
    j["frames"] = clip.packed_frames;
  } else {
    j["frames"] = clip.frame_paths;
  }
  nlohmann::json gaze = nlohmann::json::array();
  for (const auto& g : clip.gaze) gaze.push_back({g.x, g.y});
  j["gaze"] = std::move(gaze);
  j["cc"] = clip.cc ? nlohmann::json(*clip.cc) : nlohmann::json(nullptr);
  j["flagged"] = clip.flagged;
  if (clip.degenerate) j["degenerate"] = true;
  j["label"] = to_string(clip.label);
  return j;
}

ClipRecord clip_from_json(const nlohmann::json& j, int frames) {
  const std::string ctx = "clip record";
  json_util::check_keys(j, {"clip_id", "video_id", "source_dataset", "scene", "time_of_day", "weather", "frames",
                            "gaze", "cc", "flagged", "degenerate", "label"},
                        ctx);
  for (const char* key : {"clip_id", "source_dataset", "scene", "time_of_day", "weather", "frames", "gaze"}) {
    if (!j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
  }
  ClipRecord c;
  std::string s;
  json_util::read(j, "clip_id", c.clip_id, ctx);
  if (c.clip_id.empty()) throw ValidationError("clip_id must be non-empty");
  json_util::read(j, "video_id", c.video_id, ctx);
  if (c.video_id.empty()) c.video_id = c.clip_id;
  json_util::read(j, "source_dataset", s, ctx);
  c.source = source_dataset_from_string(s);
  json_util::read(j, "scene", s, ctx);
  c.scene = scene_from_string(s);
  json_util::read(j, "time_of_day", s, ctx);
  c.time_of_day = time_of_day_from_string(s);
  json_util::read(j, "weather", s, ctx);
  c.weather = weather_from_string(s);

  const auto& fr = j.at("frames");
  if (fr.is_string()) {
    c.packed_frames = fr.get<std::string>();
    if (c.packed_frames.empty()) throw ValidationError("frames: packed reference must be non-empty");
  } else if (fr.is_array()) {
    if (static_cast<int>(fr.size()) != frames) {
      throw ValidationError("frames: expected " + std::to_string(frames) + " paths, got " +
                            std::to_string(fr.size()));
    }
    for (const auto& p : fr) {
      if (!p.is_string()) throw ValidationError("frames: paths must be strings");
      c.frame_paths.push_back(p.get<std::string>());
    }
  } else {
    throw ValidationError("frames: expected a list of paths or a packed-tensor reference");
  }

  const auto& gz = j.at("gaze");
  if (!gz.is_array() || static_cast<int>(gz.size()) != frames) {
    throw ValidationError("gaze: expected " + std::to_string(frames) + " points, got " +
                          (gz.is_array() ? std::to_string(gz.size()) : std::string("a non-list")));
  }
  for (std::size_t t = 0; t < gz.size(); ++t) {
    const auto& p = gz[t];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      throw ValidationError("gaze[" + std::to_string(t) + "]: expected [x, y]");
    }
    c.gaze.push_back(GazePoint::clamped(p[0].get<double>(), p[1].get<double>()));
  }

  if (j.contains("cc") && !j.at("cc").is_null()) {
    if (!j.at("cc").is_number()) throw ValidationError("cc: expected a number or null");
    const double cc = j.at("cc").get<double>();
    if (!(cc >= -1.0 && cc <= 1.0)) throw ValidationError("cc: must lie in [-1, 1]");
    c.cc = cc;
  }
  json_util::read(j, "flagged", c.flagged, ctx);
  json_util::read(j, "degenerate", c.degenerate, ctx);
  if (c.flagged && !c.cc) throw ValidationError("flagged clips must carry a cc value");
  s = "unlabeled";
  json_util::read(j, "label", s, ctx);
  c.label = label_from_string(s);
  return c;
}

std::string manifest_text(std::span<const ClipRecord> clips) {
  std::string out;
  for (const auto& c : clips) {
    out += to_json(c).dump();
    out += '\n';
  }
  return out;
}

void write_manifest(std::span<const ClipRecord> clips, const std::filesystem::path& path) {
  write_file_bytes(path, manifest_text(clips));
}

std::vector<ClipRecord> parse_manifest(const std::string& text, const std::string& source_name, int frames) {
  std::vector<ClipRecord> clips;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      clips.push_back(clip_from_json(nlohmann::json::parse(line), frames));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(source_name + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(source_name + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return clips;
}

std::vector<ClipRecord> read_manifest(const std::filesystem::path& path, int frames) {
  return parse_manifest(read_file_bytes(path), path.string(), frames);
}

}  // namespace eyecue
