#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eyecue/dataset.hpp"
#include "eyecue/metrics.hpp"
#include "eyecue/model.hpp"

namespace eyecue {

struct SynthClip;

/// A labeled clip with its raw frames in memory. Frames are shared so that
/// splits and runner cells never copy pixels.
struct LabeledClip {
  ClipRecord record;
  std::shared_ptr<const std::vector<FrameImage>> frames;
};

std::vector<LabeledClip> to_labeled(std::vector<SynthClip>&& clips);
std::vector<LabeledClip> load_clips(std::span<const ClipRecord> records, const std::filesystem::path& base_dir);
/// Clips whose record appears (by clip_id) in `records`, in that order.
std::vector<LabeledClip> select_clips(std::span<const LabeledClip> pool, std::span<const ClipRecord> records);

/// Encoder input for a clip under `config`. Clips longer than
/// frames_per_clip contribute their first frames_per_clip frames. A gaze
/// override replaces the recorded track (used for noise studies).
ClipInput<float> make_input(const LabeledClip& clip, const ModelConfig& config,
                            const GazeTrack* gaze_override = nullptr);

struct TrainConfig {
  int epochs = 15;
  int batch_size = 16;
  double learning_rate = 1e-4;  // peak; cosine-decayed to zero over all steps
  double weight_decay = 0.01;   // decoupled, applied to weight matrices only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::array<double, 2> class_weights{1.0, 1.0};  // {attentive, distracted}
  double validation_fraction = 0.1;  // held out of the training set for checkpoint selection
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;  // at the epoch's last step
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  bool has_validation = false;
};

struct TrainResult {
  ParamStore<float> params;
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 1-based epoch whose parameters were kept
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// AdamW over per-clip gradients averaged across each batch. Deterministic in
/// train.seed: the validation split, the data order and dropout masks all
/// derive from it. Returns the epoch with the best validation accuracy (lower
/// validation loss breaks ties), or the last epoch without validation.
TrainResult train(const ModelConfig& model, const TrainConfig& train_config, std::span<const LabeledClip> clips,
                  const EpochCallback& on_epoch = {});

struct Evaluation {
  MetricsReport metrics;
  std::vector<std::string> clip_ids;
  std::vector<double> scores;  // probability of distracted
  std::vector<int> labels;
};

/// Per-clip gaze overrides, parallel to `clips`, or empty.
Evaluation evaluate(const ParamStore<float>& params, const ModelConfig& config, std::span<const LabeledClip> clips,
                    std::span<const GazeTrack> gaze_overrides = {});

}  // namespace eyecue
