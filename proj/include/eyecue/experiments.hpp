#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eyecue/train.hpp"

namespace eyecue {

/// Fixed train/test clips shared by every cell of a runner.
struct ExperimentData {
  std::vector<LabeledClip> train;
  std::vector<LabeledClip> test;
};

/// One trained-and-evaluated configuration. With repeats > 1 each run uses
/// its own derived seed; run 0 uses the configured seed.
struct CellResult {
  std::string name;
  ModelConfig model;
  std::vector<MetricsReport> runs;
  std::optional<double> reference_accuracy;  // reference only, in percent

  double mean_accuracy() const;
};

using CellCallback = std::function<void(const CellResult&)>;

CellResult run_cell(const std::string& name, const ModelConfig& model, const TrainConfig& train_config,
                    const ExperimentData& data, int repeats = 1);

// ---- ablation ---------------------------------------------------------------

struct AblationRow {
  bool gaze = false;
  bool video = false;
  bool gdsq = false;
  double reference_accuracy = 0.0;

  std::string name() const;
};

/// The seven branch combinations in reference-table order.
std::vector<AblationRow> ablation_rows();

/// Rows can be limited by name ("gaze", "video", "gdsq", "gaze+video", ...,
/// "gaze+video+gdsq"); empty means all seven.
std::vector<CellResult> run_ablation(const ModelConfig& base, const TrainConfig& train_config,
                                     const ExperimentData& data, const std::vector<std::string>& only = {},
                                     int repeats = 1, const CellCallback& on_cell = {});

// ---- clip length x neighborhood sweep ---------------------------------------

struct SweepCell {
  int frames = 16;
  int h = 1;
};

std::optional<double> sweep_reference_accuracy(int frames, int h);

std::vector<CellResult> run_sweep(const ModelConfig& base, const TrainConfig& train_config, const ExperimentData& data,
                                  std::span<const int> frames = std::vector<int>{8, 16},
                                  std::span<const int> hs = std::vector<int>{1, 5, 9, 25}, int repeats = 1,
                                  const CellCallback& on_cell = {});

// ---- preprocessing ----------------------------------------------------------

inline constexpr int kReferenceFrameWidth = 1920;

/// none, dot r in {10, 20, 30}, heatmap r in {50, 75, 100}, crop in
/// {336, 448, 560}, with lengths rescaled from a 1920-pixel-wide frame to
/// `frame_width`.
std::vector<std::pair<std::string, PreprocessSpec>> preprocessing_grid(int frame_width);

std::vector<CellResult> run_preprocessing_study(const ModelConfig& base, const TrainConfig& train_config,
                                                const ExperimentData& data, int frame_width, int repeats = 1,
                                                const CellCallback& on_cell = {});

// ---- gaze noise -------------------------------------------------------------

/// Offsets every point by an independent draw from the uniform disk of radius
/// `level` raw-frame pixels, then clamps to the frame.
GazeTrack perturb_gaze(const GazeTrack& track, double level, int frame_height, int frame_width, std::uint64_t seed);

struct RobustnessRow {
  double level = 0.0;
  MetricsReport metrics;
  std::optional<double> reference_accuracy;
};

std::vector<RobustnessRow> run_robustness(const ParamStore<float>& params, const ModelConfig& config,
                                          std::span<const LabeledClip> clips, std::span<const double> levels,
                                          std::uint64_t seed);

// ---- scenario breakdown -----------------------------------------------------

struct ScenarioGroup {
  std::string axis;  // scene / time_of_day / weather
  std::string tag;
  int count = 0;
  double accuracy = 0.0;
  std::optional<int> reference_count;
  std::optional<double> reference_accuracy;
};

struct ScenarioBreakdown {
  std::vector<ScenarioGroup> groups;
  std::vector<std::string> notes;  // e.g. omitted empty groups
};

ScenarioBreakdown scenario_breakdown(const Evaluation& evaluation, std::span<const LabeledClip> clips);

// ---- leave one dataset out --------------------------------------------------

struct LeaveOneOutResult {
  SourceDataset held_out = SourceDataset::kBddA;
  std::size_t train_count = 0;
  Evaluation evaluation;
  std::optional<double> reference_accuracy;
  std::optional<double> reference_f1;
};

/// Throws PolicyError for TrafficGaze, whose class balance rules it out.
void check_leave_one_out_target(SourceDataset held_out);

LeaveOneOutResult leave_one_out(const ModelConfig& model, const TrainConfig& train_config,
                                std::span<const LabeledClip> clips, SourceDataset held_out);

// ---- JSON -------------------------------------------------------------------

nlohmann::json to_json(const MetricsReport& m);
nlohmann::json to_json(const CellResult& c);
nlohmann::json to_json(const RobustnessRow& r);
nlohmann::json to_json(const ScenarioBreakdown& b);
nlohmann::json to_json(const LeaveOneOutResult& r);
nlohmann::json to_json(const EpochRecord& r);

}  // namespace eyecue
