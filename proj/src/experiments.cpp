#include "eyecue/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "eyecue/errors.hpp"
#include "eyecue/rng.hpp"

namespace eyecue {

double CellResult::mean_accuracy() const {
  if (runs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : runs) sum += r.accuracy;
  return sum / static_cast<double>(runs.size());
}

CellResult run_cell(const std::string& name, const ModelConfig& model, const TrainConfig& train_config,
                    const ExperimentData& data, int repeats) {
  if (repeats < 1) throw ValidationError("repeats must be >= 1");
  CellResult cell;
  cell.name = name;
  cell.model = model;
  for (int r = 0; r < repeats; ++r) {
    TrainConfig tc = train_config;
    if (r > 0) tc.seed = derive_seed(train_config.seed, static_cast<std::uint64_t>(r));
    const TrainResult trained = train(model, tc, data.train);
    cell.runs.push_back(evaluate(trained.params, model, data.test).metrics);
  }
  return cell;
}

// ---- ablation ---------------------------------------------------------------

std::string AblationRow::name() const {
  std::string s;
  for (auto [on, part] : {std::pair{gaze, "gaze"}, std::pair{video, "video"}, std::pair{gdsq, "gdsq"}}) {
    if (on) s += (s.empty() ? "" : "+") + std::string(part);
  }
  return s;
}

std::vector<AblationRow> ablation_rows() {
  return {{true, false, false, 54.13}, {false, true, false, 67.53}, {false, false, true, 68.80},
          {true, false, true, 69.36},  {false, true, true, 70.25},  {true, true, false, 72.31},
          {true, true, true, 74.38}};
}

std::vector<CellResult> run_ablation(const ModelConfig& base, const TrainConfig& train_config,
                                     const ExperimentData& data, const std::vector<std::string>& only, int repeats,
                                     const CellCallback& on_cell) {
  const auto rows = ablation_rows();
  for (const auto& name : only) {
    if (std::none_of(rows.begin(), rows.end(), [&](const AblationRow& r) { return r.name() == name; })) {
      std::string allowed;
      for (const auto& r : rows) allowed += (allowed.empty() ? "" : ", ") + r.name();
      throw ValidationError("unknown ablation row '" + name + "' (allowed: " + allowed + ")");
    }
  }
  std::vector<CellResult> out;
  for (const auto& row : rows) {
    if (!only.empty() && std::find(only.begin(), only.end(), row.name()) == only.end()) continue;
    ModelConfig cfg = base;
    cfg.use_gaze = row.gaze;
    cfg.use_video = row.video;
    cfg.use_gdsq = row.gdsq;
    CellResult cell = run_cell(row.name(), cfg, train_config, data, repeats);
    cell.reference_accuracy = row.reference_accuracy;
    if (on_cell) on_cell(cell);
    out.push_back(std::move(cell));
  }
  return out;
}

// ---- sweep ------------------------------------------------------------------

std::optional<double> sweep_reference_accuracy(int frames, int h) {
  static const std::map<std::pair<int, int>, double> table{
      {{8, 1}, 74.09},  {{8, 5}, 72.93},  {{8, 9}, 70.04},  {{8, 25}, 68.60},
      {{16, 1}, 74.38}, {{16, 5}, 73.35}, {{16, 9}, 72.11}, {{16, 25}, 70.04}};
  auto it = table.find({frames, h});
  if (it == table.end()) return std::nullopt;
  return it->second;
}

std::vector<CellResult> run_sweep(const ModelConfig& base, const TrainConfig& train_config, const ExperimentData& data,
                                  std::span<const int> frames, std::span<const int> hs, int repeats,
                                  const CellCallback& on_cell) {
  auto cell_config = [&base](int n, int h) {
    ModelConfig cfg = base;
    cfg.frames_per_clip = n;
    cfg.neighborhood = h;
    return cfg;
  };
  // Reject the whole grid before any training starts.
  for (int n : frames) {
    for (int h : hs) {
      try {
        cell_config(n, h).validate();
      } catch (const ValidationError& e) {
        throw ValidationError(std::string("sweep cell frames=") + std::to_string(n) + ",h=" + std::to_string(h) +
                              ": " + e.what() + " (use a smaller patch_size or larger encoder_input_size)");
      }
    }
  }
  std::vector<CellResult> out;
  for (int n : frames) {
    for (int h : hs) {
      const ModelConfig cfg = cell_config(n, h);
      CellResult cell = run_cell("frames=" + std::to_string(n) + ",h=" + std::to_string(h), cfg, train_config, data,
                                 repeats);
      cell.reference_accuracy = sweep_reference_accuracy(n, h);
      if (on_cell) on_cell(cell);
      out.push_back(std::move(cell));
    }
  }
  return out;
}

// ---- preprocessing ----------------------------------------------------------

std::vector<std::pair<std::string, PreprocessSpec>> preprocessing_grid(int frame_width) {
  if (frame_width <= 0) throw ValidationError("preprocessing grid: frame width must be positive");
  const double scale = static_cast<double>(frame_width) / kReferenceFrameWidth;
  std::vector<std::pair<std::string, PreprocessSpec>> grid;
  grid.push_back({"none", PreprocessSpec{}});
  for (int r : {10, 20, 30}) {
    PreprocessSpec s;
    s.mode = PreprocessMode::kDot;
    s.dot_radius = r * scale;
    grid.push_back({"dot r=" + std::to_string(r), s});
  }
  for (int r : {50, 75, 100}) {
    PreprocessSpec s;
    s.mode = PreprocessMode::kHeatmap;
    s.heatmap_radius = r * scale;
    grid.push_back({"heatmap r=" + std::to_string(r), s});
  }
  for (int c : {336, 448, 560}) {
    PreprocessSpec s;
    s.mode = PreprocessMode::kCrop;
    s.crop_size = std::max(1, static_cast<int>(std::lround(c * scale)));
    grid.push_back({"crop " + std::to_string(c), s});
  }
  return grid;
}

std::vector<CellResult> run_preprocessing_study(const ModelConfig& base, const TrainConfig& train_config,
                                                const ExperimentData& data, int frame_width, int repeats,
                                                const CellCallback& on_cell) {
  std::vector<CellResult> out;
  for (const auto& [name, spec] : preprocessing_grid(frame_width)) {
    ModelConfig cfg = base;
    cfg.preprocessing = spec;
    CellResult cell = run_cell(name, cfg, train_config, data, repeats);
    if (on_cell) on_cell(cell);
    out.push_back(std::move(cell));
  }
  return out;
}

// ---- robustness -------------------------------------------------------------

GazeTrack perturb_gaze(const GazeTrack& track, double level, int frame_height, int frame_width, std::uint64_t seed) {
  if (!(level >= 0.0) || !std::isfinite(level)) throw ValidationError("perturb_gaze: level must be >= 0");
  if (frame_height <= 0 || frame_width <= 0) throw ValidationError("perturb_gaze: frame dims must be positive");
  if (level == 0.0) return track;
  Rng rng(seed);
  GazeTrack out;
  out.reserve(track.size());
  for (const GazePoint& g : track) {
    const double r = level * std::sqrt(uniform01(rng));
    const double theta = 2.0 * std::numbers::pi * uniform01(rng);
    const double px = g.x * frame_width + r * std::cos(theta);
    const double py = g.y * frame_height + r * std::sin(theta);
    out.push_back(GazePoint::clamped(px / frame_width, py / frame_height));
  }
  return out;
}

std::vector<RobustnessRow> run_robustness(const ParamStore<float>& params, const ModelConfig& config,
                                          std::span<const LabeledClip> clips, std::span<const double> levels,
                                          std::uint64_t seed) {
  static const std::map<double, double> reference{{0.0, 74.38}, {20.0, 74.17}, {100.0, 71.07}};
  std::vector<RobustnessRow> rows;
  for (double level : levels) {
    std::vector<GazeTrack> tracks;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      const auto& c = clips[i];
      if (!c.frames || c.frames->empty()) throw ValidationError("run_robustness: clip without frames");
      const FrameImage& f = c.frames->front();
      tracks.push_back(perturb_gaze(c.record.gaze, level, f.height, f.width, derive_seed(seed, i)));
    }
    RobustnessRow row;
    row.level = level;
    row.metrics = evaluate(params, config, clips, tracks).metrics;
    if (auto it = reference.find(level); it != reference.end()) row.reference_accuracy = it->second;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- scenario breakdown -----------------------------------------------------

ScenarioBreakdown scenario_breakdown(const Evaluation& evaluation, std::span<const LabeledClip> clips) {
  if (evaluation.clip_ids.size() != clips.size()) {
    throw ValidationError("scenario_breakdown: evaluation and clips differ in length");
  }
  struct Ref {
    int count;
    double accuracy;
  };
  static const std::map<std::string, Ref> reference{
      {"city", {368, 73.64}},   {"highway", {50, 76.00}},  {"rural", {66, 78.79}},
      {"day", {366, 74.32}},    {"evening", {44, 61.36}},  {"night", {74, 79.73}},
      {"sunny", {253, 74.70}},  {"cloudy", {147, 72.79}},  {"rainy", {84, 72.62}}};

  ScenarioBreakdown out;
  auto add_axis = [&](const std::string& axis, const std::vector<std::string>& tags, auto tag_of) {
    for (const auto& tag : tags) {
      int count = 0;
      int correct = 0;
      for (std::size_t i = 0; i < clips.size(); ++i) {
        if (clips[i].record.clip_id != evaluation.clip_ids[i]) {
          throw ValidationError("scenario_breakdown: clip order differs from the evaluation");
        }
        if (tag_of(clips[i].record) != tag) continue;
        ++count;
        const bool predicted = evaluation.scores[i] > kDecisionThreshold;
        correct += static_cast<int>(predicted == (evaluation.labels[i] == kDistracted));
      }
      if (count == 0) {
        out.notes.push_back(axis + "=" + tag + ": no test clips, omitted");
        continue;
      }
      ScenarioGroup g;
      g.axis = axis;
      g.tag = tag;
      g.count = count;
      g.accuracy = static_cast<double>(correct) / count;
      if (auto it = reference.find(tag); it != reference.end()) {
        g.reference_count = it->second.count;
        g.reference_accuracy = it->second.accuracy;
      }
      out.groups.push_back(g);
    }
  };
  add_axis("scene", {"city", "highway", "rural"}, [](const ClipRecord& r) { return to_string(r.scene); });
  add_axis("time_of_day", {"day", "evening", "night"}, [](const ClipRecord& r) { return to_string(r.time_of_day); });
  add_axis("weather", {"sunny", "cloudy", "rainy"}, [](const ClipRecord& r) { return to_string(r.weather); });
  return out;
}

// ---- leave one dataset out --------------------------------------------------

void check_leave_one_out_target(SourceDataset held_out) {
  switch (held_out) {
    case SourceDataset::kBddA:
    case SourceDataset::kDada2000:
    case SourceDataset::kDrEyeVE:
      return;
    case SourceDataset::kTrafficGaze:
      throw PolicyError(
          "leave-one-dataset-out is not run with TrafficGaze held out: its severe class imbalance leaves too few "
          "distracted clips for a meaningful test set");
    case SourceDataset::kSynthetic:
      break;
  }
  throw PolicyError("leave-one-dataset-out holds out one of BDD-A, DADA-2000, DR(eye)VE; got '" +
                    to_string(held_out) + "'");
}

LeaveOneOutResult leave_one_out(const ModelConfig& model, const TrainConfig& train_config,
                                std::span<const LabeledClip> clips, SourceDataset held_out) {
  check_leave_one_out_target(held_out);
  std::vector<LabeledClip> train_set, test_set;
  for (const auto& c : clips) {
    if (class_index(c.record.label) < 0) continue;
    (c.record.source == held_out ? test_set : train_set).push_back(c);
  }
  if (test_set.empty()) throw ValidationError("leave_one_out: no labeled clips from " + to_string(held_out));
  if (train_set.empty()) throw ValidationError("leave_one_out: no labeled clips outside " + to_string(held_out));

  static const std::map<SourceDataset, std::pair<double, double>> reference{
      {SourceDataset::kBddA, {65.24, 0.71}},
      {SourceDataset::kDada2000, {68.29, 0.68}},
      {SourceDataset::kDrEyeVE, {60.20, 0.67}}};
  LeaveOneOutResult r;
  r.held_out = held_out;
  r.train_count = train_set.size();
  const TrainResult trained = train(model, train_config, train_set);
  r.evaluation = evaluate(trained.params, model, test_set);
  r.reference_accuracy = reference.at(held_out).first;
  r.reference_f1 = reference.at(held_out).second;
  return r;
}

// ---- JSON -------------------------------------------------------------------

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json class_json(const ClassMetrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

}  // namespace

nlohmann::json to_json(const MetricsReport& m) {
  nlohmann::json roc = nlohmann::json::array();
  for (const auto& p : m.roc) {
    roc.push_back({{"threshold", std::isfinite(p.threshold) ? nlohmann::json(p.threshold) : nlohmann::json("inf")},
                   {"fpr", p.fpr},
                   {"tpr", p.tpr}});
  }
  return {{"count", m.count},
          {"accuracy", m.accuracy},
          {"confusion", {{"tp", m.confusion.tp}, {"fn", m.confusion.fn}, {"fp", m.confusion.fp}, {"tn", m.confusion.tn}}},
          {"distracted", class_json(m.distracted)},
          {"attentive", class_json(m.attentive)},
          {"auc", optional_json(m.auc)},
          {"mean_loss", m.mean_loss},
          {"roc", roc}};
}

nlohmann::json to_json(const CellResult& c) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : c.runs) {
    nlohmann::json j = to_json(r);
    j.erase("roc");
    runs.push_back(std::move(j));
  }
  return {{"name", c.name},
          {"model", to_json(c.model)},
          {"mean_accuracy", c.mean_accuracy()},
          {"runs", runs},
          {"reference_accuracy_percent", optional_json(c.reference_accuracy)}};
}

nlohmann::json to_json(const RobustnessRow& r) {
  nlohmann::json m = to_json(r.metrics);
  m.erase("roc");
  return {{"level_px", r.level}, {"metrics", m}, {"reference_accuracy_percent", optional_json(r.reference_accuracy)}};
}

nlohmann::json to_json(const ScenarioBreakdown& b) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : b.groups) {
    groups.push_back({{"axis", g.axis},
                      {"tag", g.tag},
                      {"count", g.count},
                      {"accuracy", g.accuracy},
                      {"reference_count", g.reference_count ? nlohmann::json(*g.reference_count) : nlohmann::json(nullptr)},
                      {"reference_accuracy_percent", optional_json(g.reference_accuracy)}});
  }
  return {{"groups", groups}, {"notes", b.notes}};
}

nlohmann::json to_json(const LeaveOneOutResult& r) {
  return {{"held_out", to_string(r.held_out)},
          {"train_count", r.train_count},
          {"test_count", r.evaluation.clip_ids.size()},
          {"metrics", to_json(r.evaluation.metrics)},
          {"reference_accuracy_percent", optional_json(r.reference_accuracy)},
          {"reference_f1", optional_json(r.reference_f1)}};
}

nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j{{"epoch", r.epoch},
                   {"learning_rate", r.learning_rate},
                   {"train_loss", r.train_loss},
                   {"train_accuracy", r.train_accuracy}};
  if (r.has_validation) {
    j["val_loss"] = r.val_loss;
    j["val_accuracy"] = r.val_accuracy;
  }
  return j;
}

}  // namespace eyecue
