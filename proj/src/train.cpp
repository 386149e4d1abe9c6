#include "eyecue/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "eyecue/errors.hpp"
#include "eyecue/json_util.hpp"
#include "eyecue/rng.hpp"
#include "eyecue/synth.hpp"

namespace eyecue {

std::vector<LabeledClip> to_labeled(std::vector<SynthClip>&& clips) {
  std::vector<LabeledClip> out;
  out.reserve(clips.size());
  for (auto& c : clips) {
    out.push_back({std::move(c.record), std::make_shared<const std::vector<FrameImage>>(std::move(c.frames))});
  }
  clips.clear();
  return out;
}

std::vector<LabeledClip> load_clips(std::span<const ClipRecord> records, const std::filesystem::path& base_dir) {
  std::vector<LabeledClip> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back({r, std::make_shared<const std::vector<FrameImage>>(load_frames(r, base_dir))});
  }
  return out;
}

std::vector<LabeledClip> select_clips(std::span<const LabeledClip> pool, std::span<const ClipRecord> records) {
  std::unordered_map<std::string, const LabeledClip*> by_id;
  for (const auto& c : pool) by_id.emplace(c.record.clip_id, &c);
  std::vector<LabeledClip> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto it = by_id.find(r.clip_id);
    if (it == by_id.end()) throw ValidationError("select_clips: unknown clip '" + r.clip_id + "'");
    out.push_back({r, it->second->frames});
  }
  return out;
}

ClipInput<float> make_input(const LabeledClip& clip, const ModelConfig& config, const GazeTrack* gaze_override) {
  const auto n = static_cast<std::size_t>(config.frames_per_clip);
  const GazeTrack& gaze = gaze_override != nullptr ? *gaze_override : clip.record.gaze;
  if (!clip.frames || clip.frames->size() < n || gaze.size() < n) {
    throw ValidationError("clip " + clip.record.clip_id + " is shorter than " + std::to_string(n) + " frames");
  }
  const GazeTrack head(gaze.begin(), gaze.begin() + static_cast<std::ptrdiff_t>(n));
  return prepare_input<float>(std::span<const FrameImage>(clip.frames->data(), n), head, config);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("train: learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ValidationError("train: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("train: betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ValidationError("train: adam_epsilon must be > 0");
  if (!(class_weights[0] > 0.0 && class_weights[1] > 0.0)) throw ValidationError("train: class weights must be > 0");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ValidationError("train: validation_fraction must lie in [0, 1)");
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"class_weights", {c.class_weights[0], c.class_weights[1]}},
          {"validation_fraction", c.validation_fraction},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  const std::string ctx = "train config";
  json_util::check_keys(j, {"epochs", "batch_size", "learning_rate", "weight_decay", "beta1", "beta2",
                            "adam_epsilon", "class_weights", "validation_fraction", "seed"},
                        ctx);
  TrainConfig c;
  json_util::read(j, "epochs", c.epochs, ctx);
  json_util::read(j, "batch_size", c.batch_size, ctx);
  json_util::read(j, "learning_rate", c.learning_rate, ctx);
  json_util::read(j, "weight_decay", c.weight_decay, ctx);
  json_util::read(j, "beta1", c.beta1, ctx);
  json_util::read(j, "beta2", c.beta2, ctx);
  json_util::read(j, "adam_epsilon", c.adam_epsilon, ctx);
  json_util::read(j, "validation_fraction", c.validation_fraction, ctx);
  if (auto it = j.find("seed"); it != j.end()) {
    if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0)) {
      throw ValidationError(ctx + ": field 'seed' must be a non-negative integer");
    }
    c.seed = it->get<std::uint64_t>();
  }
  if (auto it = j.find("class_weights"); it != j.end()) {
    if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number()) {
      throw ValidationError(ctx + ": class_weights must be [attentive, distracted]");
    }
    c.class_weights = {(*it)[0].get<double>(), (*it)[1].get<double>()};
  }
  c.validate();
  return c;
}

namespace {

int require_class(const LabeledClip& clip) {
  const int label = class_index(clip.record.label);
  if (label < 0) {
    throw ValidationError("clip " + clip.record.clip_id + " has label '" + to_string(clip.record.label) +
                          "'; only attentive/distracted clips can be trained or evaluated");
  }
  return label;
}

class AdamW {
 public:
  AdamW(const ParamStore<float>& params, const TrainConfig& c)
      : m_(params.zeros_like()), v_(params.zeros_like()), config_(c) {
    for (const auto& e : params) {
      const std::string suffix = ".weight";
      decay_.push_back(e.name.size() > suffix.size() &&
                       e.name.compare(e.name.size() - suffix.size(), suffix.size(), suffix) == 0);
    }
  }

  void step(ParamStore<float>& params, const ParamStore<float>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, t_);
    const double c2 = 1.0 - std::pow(config_.beta2, t_);
    const auto b1 = static_cast<float>(config_.beta1);
    const auto b2 = static_cast<float>(config_.beta2);
    const auto step_size = static_cast<float>(lr / c1);
    const auto inv_c2 = static_cast<float>(1.0 / c2);
    const auto eps = static_cast<float>(config_.adam_epsilon);
    const auto shrink = static_cast<float>(1.0 - lr * config_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params.at(i).value;
      const auto& g = grads.at(i).value;
      auto& m = m_.at(i).value;
      auto& v = v_.at(i).value;
      m = b1 * m + (1.0f - b1) * g;
      v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
      if (decay_[i]) p *= shrink;
      p.array() -= step_size * m.array() / ((v.array() * inv_c2).sqrt() + eps);
    }
  }

 private:
  ParamStore<float> m_;
  ParamStore<float> v_;
  std::vector<bool> decay_;
  TrainConfig config_;
  int t_ = 0;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

Split validation_split(std::span<const LabeledClip> clips, double fraction, std::uint64_t seed) {
  Split s;
  Rng rng(derive_seed(seed, 0x5A11));
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      if (require_class(clips[i]) == cls) members.push_back(i);
    }
    shuffle_in_place(members, rng);
    const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    s.val.insert(s.val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.train.insert(s.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

double cosine_lr(double peak, long step, long total) {
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

double clip_loss(double p_distracted, int label) {
  const double p = label == kDistracted ? p_distracted : 1.0 - p_distracted;
  return -std::log(std::max(p, 1e-12));
}

}  // namespace

TrainResult train(const ModelConfig& model, const TrainConfig& tc, std::span<const LabeledClip> clips,
                  const EpochCallback& on_epoch) {
  model.validate();
  tc.validate();
  if (clips.empty()) throw ValidationError("train: no training clips");
  for (const auto& c : clips) require_class(c);

  Split split = validation_split(clips, tc.validation_fraction, tc.seed);
  if (split.train.empty()) throw ValidationError("train: validation split leaves no training clips");
  std::vector<LabeledClip> val_clips;
  for (std::size_t i : split.val) val_clips.push_back(clips[i]);

  TrainResult result;
  ParamStore<float> params = init_params(model, derive_seed(tc.seed, 0x1A17));
  ParamStore<float> grads = params.zeros_like();
  AdamW optimizer(params, tc);
  Rng order_rng(derive_seed(tc.seed, 0x0D));
  Rng dropout_rng(derive_seed(tc.seed, 0xD0));
  const Regularizer reg{model.dropout, &dropout_rng};

  const auto n = static_cast<long>(split.train.size());
  const long steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const long total_steps = steps_per_epoch * tc.epochs;
  long step = 0;
  double best_acc = -1.0;
  double best_loss = HUGE_VAL;
  std::vector<std::size_t> order = split.train;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    shuffle_in_place(order, order_rng);
    double loss_sum = 0.0;
    int correct = 0;
    double lr = 0.0;
    for (long b = 0; b < steps_per_epoch; ++b, ++step) {
      const long begin = b * tc.batch_size;
      const long end = std::min(n, begin + tc.batch_size);
      grads.set_zero();
      for (long k = begin; k < end; ++k) {
        const LabeledClip& clip = clips[order[static_cast<std::size_t>(k)]];
        const int label = class_index(clip.record.label);
        const ClipInput<float> input = make_input(clip, model);
        Tape<float> tape(true);
        ParamBinder<float> bind(tape, params, &grads);
        auto vars = graph::forward(bind, model, input, reg);
        const auto weight = static_cast<float>(tc.class_weights[static_cast<std::size_t>(label)] /
                                               static_cast<double>(end - begin));
        const Var loss = tape.softmax_cross_entropy(vars.logits, label, weight);
        tape.backward(loss);
        loss_sum += tape.value(loss)(0, 0) / weight;
        const MatrixF& z = tape.value(vars.logits);
        correct += static_cast<int>((z(0, 1) > z(0, 0)) == (label == kDistracted));
      }
      lr = cosine_lr(tc.learning_rate, step, total_steps);
      optimizer.step(params, grads, lr);
      if (!params.all_finite()) throw NumericError("train: parameters became non-finite at step " + std::to_string(step));
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = lr;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    bool keep = true;
    if (!val_clips.empty()) {
      const Evaluation ev = evaluate(params, model, val_clips);
      rec.has_validation = true;
      rec.val_accuracy = ev.metrics.accuracy;
      rec.val_loss = ev.metrics.mean_loss;
      keep = rec.val_accuracy > best_acc || (rec.val_accuracy == best_acc && rec.val_loss < best_loss);
      if (keep) {
        best_acc = rec.val_accuracy;
        best_loss = rec.val_loss;
      }
    }
    if (keep) {
      result.params = params;
      result.best_epoch = epoch;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

Evaluation evaluate(const ParamStore<float>& params, const ModelConfig& config, std::span<const LabeledClip> clips,
                    std::span<const GazeTrack> gaze_overrides) {
  if (!gaze_overrides.empty() && gaze_overrides.size() != clips.size()) {
    throw ValidationError("evaluate: gaze overrides do not match the clip count");
  }
  Evaluation ev;
  double loss = 0.0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const int label = require_class(clips[i]);
    const ClipInput<float> input = make_input(clips[i], config, gaze_overrides.empty() ? nullptr : &gaze_overrides[i]);
    const Classification c = classify(input, params, config);
    ev.clip_ids.push_back(clips[i].record.clip_id);
    ev.scores.push_back(c.probabilities[kDistracted]);
    ev.labels.push_back(label);
    loss += clip_loss(c.probabilities[kDistracted], label);
  }
  ev.metrics = compute_metrics(ev.scores, ev.labels);
  ev.metrics.mean_loss = clips.empty() ? 0.0 : loss / static_cast<double>(clips.size());
  return ev;
}

}  // namespace eyecue
