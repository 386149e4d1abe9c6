#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eyecue/attention.hpp"
#include "eyecue/gaze_geometry.hpp"
#include "eyecue/tensor.hpp"

namespace eyecue {

inline constexpr int kAttentive = 0;
inline constexpr int kDistracted = 1;

struct ModelConfig {
  int frames_per_clip = 16;
  int encoder_input_size = 64;
  int patch_size = 16;
  int embed_dim = 64;
  int gaze_heads = 8;
  int gaze_blocks = 1;
  int video_heads = 4;
  int video_blocks = 2;
  int gdsq_heads = 8;
  int gdsq_blocks = 2;
  int neighborhood = 1;  // h
  PreprocessSpec preprocessing;
  int hidden_width = 64;
  // Which class tokens reach the fusion head.
  bool use_video = true;
  bool use_gdsq = true;
  bool use_gaze = true;
  double dropout = 0.0;

  void validate() const;
  PatchGrid grid() const { return make_grid(encoder_input_size, encoder_input_size, patch_size); }
  int patch_vector_size() const { return patch_size * patch_size * 3; }
  int fusion_branches() const { return int(use_video) + int(use_gdsq) + int(use_gaze); }
  int fusion_width() const { return fusion_branches() * embed_dim; }
  bool runs_video_encoder() const { return use_video || use_gdsq; }
  bool runs_gaze_encoder() const { return use_gaze || use_gdsq; }

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys and wrong types are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Declares every parameter (all branches, whether or not fused) with
/// shapes implied by the config. Values are zero.
template <typename T>
ParamStore<T> declare_model_params(const ModelConfig& config);

/// Deterministic in `seed`. The standard scheme leaves every residual
/// branch and the classifier output at zero, so an untrained model
/// predicts (0.5, 0.5).
ParamStore<float> init_params(const ModelConfig& config, std::uint64_t seed,
                              InitScheme scheme = InitScheme::kStandard);

/// Encoder-ready clip: patch vectors laid out frame-major then row-major,
/// the raw gaze track, and the gaze track in encoder-frame coordinates.
template <typename T>
struct ClipInput {
  Matrix<T> patches;
  GazeTrack gaze;
  GazeTrack gaze_in_frame;
};

/// (n * G) x (p * p * 3); row t * G + r * grid_cols + c.
template <typename T>
Matrix<T> patchify(std::span<const FrameImage> frames, int patch_size);

/// Preprocessing, resize, patchify.
template <typename T>
ClipInput<T> prepare_input(std::span<const FrameImage> raw_frames, const GazeTrack& gaze,
                           const ModelConfig& config);

struct ForwardTrace {
  MatrixF v_cls;
  MatrixF s_cls;
  MatrixF g_cls;
  std::vector<std::vector<int>> selected;  // per frame, indices into the frame's grid
  int selected_count = 0;                  // |S|, always h * n when GDSQ runs
  std::array<double, 2> logits{0.0, 0.0};
};

namespace graph {

template <typename T>
struct ModelVars {
  Var logits;
  Var v_cls, g_cls, s_cls;
  Var gaze_tokens, patch_tokens, selected_tokens;
  std::vector<std::vector<int>> selected;
};

template <typename T>
void encode_gaze(ParamBinder<T>& bind, const ModelConfig& config, const GazeTrack& gaze, const Regularizer& reg,
                 ModelVars<T>& out);

template <typename T>
void encode_video(ParamBinder<T>& bind, const ModelConfig& config, const Matrix<T>& patches,
                  const Regularizer& reg, ModelVars<T>& out);

/// Selection + M cross-attention blocks + mean pooling. Requires
/// out.gaze_tokens and out.patch_tokens.
template <typename T>
void gdsq(ParamBinder<T>& bind, const ModelConfig& config, const GazeTrack& gaze_in_frame, const Regularizer& reg,
          ModelVars<T>& out);

template <typename T>
void fuse(ParamBinder<T>& bind, const ModelConfig& config, ModelVars<T>& out);

/// Whole network; only the branches the config needs are built.
template <typename T>
ModelVars<T> forward(ParamBinder<T>& bind, const ModelConfig& config, const ClipInput<T>& input,
                     const Regularizer& reg = {});

}  // namespace graph

struct GazeEncoding {
  MatrixF cls;     // 1 x d
  MatrixF tokens;  // n x d
};

struct VideoEncoding {
  MatrixF cls;      // 1 x d
  MatrixF patches;  // (n * G) x d, frame-major
};

struct GdsqOutput {
  MatrixF s_cls;
  std::vector<std::vector<int>> selected;
  int selected_count = 0;
};

struct Classification {
  std::array<double, 2> probabilities{0.5, 0.5};  // {attentive, distracted}
  ForwardTrace trace;
};

GazeEncoding encode_gaze(const GazeTrack& track, const ParamStore<float>& params, const ModelConfig& config);

/// `frames` must already be preprocessed to encoder resolution.
VideoEncoding encode_video(std::span<const FrameImage> frames, const ParamStore<float>& params,
                           const ModelConfig& config);

/// `track` is in encoder-frame coordinates.
GdsqOutput gdsq(const MatrixF& gaze_tokens, const MatrixF& patch_tokens, const GazeTrack& track,
                const PatchGrid& grid, const ModelConfig& config, const ParamStore<float>& params);

/// The cross-attention stack on an explicit S, for callers that already
/// gathered the selected tokens.
MatrixF gdsq_pool(const MatrixF& gaze_tokens, const MatrixF& selected_tokens, const ModelConfig& config,
                  const ParamStore<float>& params);

/// Raw frames and raw gaze in, class probabilities out.
Classification classify(std::span<const FrameImage> raw_frames, const GazeTrack& track,
                        const ParamStore<float>& params, const ModelConfig& config);

Classification classify(const ClipInput<float>& input, const ParamStore<float>& params, const ModelConfig& config);

// ---- external video backbones ---------------------------------------------

struct ProviderInfo {
  std::string name;
  int grid_rows = 0;
  int grid_cols = 0;
  int frames = 0;
  int dim = 0;
  bool token_reduction = false;
};

struct ProviderOutput {
  MatrixF cls;                       // 1 x d
  std::vector<MatrixF> frame_tokens; // per frame, (grid_rows * grid_cols) x d, row-major grid order
};

/// Source of video tokens, e.g. a pretrained backbone.
class TokenProvider {
 public:
  virtual ~TokenProvider() = default;
  virtual ProviderInfo info() const = 0;
  virtual ProviderOutput encode(std::span<const FrameImage> frames) const = 0;
};

/// Validates a provider's output and lays it out as encode_video does.
/// Throws CapabilityError for token reduction or missing per-frame tokens.
VideoEncoding backbone_adapter(const TokenProvider& provider, std::span<const FrameImage> frames);

/// The built-in video encoder exposed through the provider interface.
class InternalVideoProvider : public TokenProvider {
 public:
  InternalVideoProvider(const ParamStore<float>& params, const ModelConfig& config)
      : params_(params), config_(config) {}
  ProviderInfo info() const override;
  ProviderOutput encode(std::span<const FrameImage> frames) const override;

 private:
  const ParamStore<float>& params_;
  ModelConfig config_;
};

/// GDSQ + fusion on tokens from any provider; gaze encoding is internal.
Classification classify_with_provider(const TokenProvider& provider, std::span<const FrameImage> frames,
                                      const GazeTrack& gaze_in_frame, const GazeTrack& gaze,
                                      const ParamStore<float>& params, const ModelConfig& config);

}  // namespace eyecue
