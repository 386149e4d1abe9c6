#include "eyecue/model.hpp"

#include <cmath>
#include <map>
#include <utility>

#include "eyecue/json_util.hpp"

namespace eyecue {

namespace {

std::string block_prefix(const std::string& branch, int i) {
  return branch + ".blocks." + std::to_string(i) + ".";
}

// Divided space-time attention patterns over [cls, patches...]: temporal
// groups link same-position patches across frames (cls excluded); spatial
// groups are one frame's patches plus cls, whose outputs are averaged.
struct VideoLayouts {
  std::shared_ptr<const AttentionLayout> time;
  std::shared_ptr<const AttentionLayout> space;
};

VideoLayouts video_layouts(int frames, int patches_per_frame) {
  thread_local std::map<std::pair<int, int>, VideoLayouts> cache;
  auto key = std::make_pair(frames, patches_per_frame);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  auto time = std::make_shared<AttentionLayout>();
  for (int g = 0; g < patches_per_frame; ++g) {
    AttentionGroup grp;
    for (int t = 0; t < frames; ++t) grp.query_rows.push_back(1 + t * patches_per_frame + g);
    grp.key_rows = grp.query_rows;
    time->groups.push_back(std::move(grp));
  }
  auto space = std::make_shared<AttentionLayout>();
  for (int t = 0; t < frames; ++t) {
    AttentionGroup grp;
    grp.query_rows.push_back(0);
    for (int g = 0; g < patches_per_frame; ++g) grp.query_rows.push_back(1 + t * patches_per_frame + g);
    grp.key_rows = grp.query_rows;
    space->groups.push_back(std::move(grp));
  }
  VideoLayouts layouts{time, space};
  cache.emplace(key, layouts);
  return layouts;
}

std::vector<int> range_rows(int first, int count) {
  std::vector<int> rows(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) rows[static_cast<std::size_t>(i)] = first + i;
  return rows;
}

void check_heads(int heads, int dim, const char* what) {
  if (heads <= 0 || dim % heads != 0) {
    throw ValidationError(std::string("model config: ") + what + " (" + std::to_string(heads) +
                          ") must divide embed_dim (" + std::to_string(dim) + ")");
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (frames_per_clip < 1) throw ValidationError("model config: frames_per_clip must be >= 1");
  if (embed_dim < 1) throw ValidationError("model config: embed_dim must be >= 1");
  const PatchGrid g = grid();
  check_heads(gaze_heads, embed_dim, "gaze_heads");
  check_heads(video_heads, embed_dim, "video_heads");
  check_heads(gdsq_heads, embed_dim, "gdsq_heads");
  if (gaze_blocks < 1 || video_blocks < 1) throw ValidationError("model config: encoder block counts must be >= 1");
  if (gdsq_blocks < 1) throw ValidationError("model config: gdsq_blocks (M) must be >= 1");
  if (!is_valid_neighborhood_size(neighborhood)) {
    throw ValidationError("model config: neighborhood must be one of 1, 5, 9, 25 (got " +
                          std::to_string(neighborhood) + ")");
  }
  if (neighborhood > g.patch_count()) {
    throw ValidationError("model config: neighborhood " + std::to_string(neighborhood) + " exceeds the " +
                          std::to_string(g.patch_count()) + "-patch grid");
  }
  if (hidden_width < 1) throw ValidationError("model config: hidden_width must be >= 1");
  if (fusion_branches() == 0) throw ValidationError("model config: at least one branch must feed the classifier");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("model config: dropout must lie in [0, 1)");
  const auto& p = preprocessing;
  if (!(p.dot_radius > 0.0) || !(p.heatmap_radius > 0.0)) {
    throw ValidationError("model config: preprocessing radii must be positive");
  }
  if (!(p.heatmap_floor >= 0.0 && p.heatmap_floor <= 1.0)) {
    throw ValidationError("model config: heatmap_floor must lie in [0, 1]");
  }
  if (p.crop_size < 1) throw ValidationError("model config: crop_size must be positive");
}

nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{
      {"frames_per_clip", c.frames_per_clip},
      {"encoder_input_size", c.encoder_input_size},
      {"patch_size", c.patch_size},
      {"embed_dim", c.embed_dim},
      {"gaze_heads", c.gaze_heads},
      {"gaze_blocks", c.gaze_blocks},
      {"video_heads", c.video_heads},
      {"video_blocks", c.video_blocks},
      {"gdsq_heads", c.gdsq_heads},
      {"gdsq_blocks", c.gdsq_blocks},
      {"neighborhood", c.neighborhood},
      {"hidden_width", c.hidden_width},
      {"use_video", c.use_video},
      {"use_gdsq", c.use_gdsq},
      {"use_gaze", c.use_gaze},
      {"dropout", c.dropout},
      {"preprocessing",
       {{"mode", to_string(c.preprocessing.mode)},
        {"dot_radius", c.preprocessing.dot_radius},
        {"heatmap_radius", c.preprocessing.heatmap_radius},
        {"heatmap_floor", c.preprocessing.heatmap_floor},
        {"crop_size", c.preprocessing.crop_size}}},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  using json_util::read;
  const std::string ctx = "model config";
  json_util::check_keys(j,
                        {"frames_per_clip", "encoder_input_size", "patch_size", "embed_dim", "gaze_heads",
                         "gaze_blocks", "video_heads", "video_blocks", "gdsq_heads", "gdsq_blocks", "neighborhood",
                         "hidden_width", "use_video", "use_gdsq", "use_gaze", "dropout", "preprocessing"},
                        ctx);
  ModelConfig c;
  read(j, "frames_per_clip", c.frames_per_clip, ctx);
  read(j, "encoder_input_size", c.encoder_input_size, ctx);
  read(j, "patch_size", c.patch_size, ctx);
  read(j, "embed_dim", c.embed_dim, ctx);
  read(j, "gaze_heads", c.gaze_heads, ctx);
  read(j, "gaze_blocks", c.gaze_blocks, ctx);
  read(j, "video_heads", c.video_heads, ctx);
  read(j, "video_blocks", c.video_blocks, ctx);
  read(j, "gdsq_heads", c.gdsq_heads, ctx);
  read(j, "gdsq_blocks", c.gdsq_blocks, ctx);
  read(j, "neighborhood", c.neighborhood, ctx);
  read(j, "hidden_width", c.hidden_width, ctx);
  read(j, "use_video", c.use_video, ctx);
  read(j, "use_gdsq", c.use_gdsq, ctx);
  read(j, "use_gaze", c.use_gaze, ctx);
  read(j, "dropout", c.dropout, ctx);
  if (j.contains("preprocessing")) {
    const auto& p = j.at("preprocessing");
    const std::string pctx = ctx + ".preprocessing";
    json_util::check_keys(p, {"mode", "dot_radius", "heatmap_radius", "heatmap_floor", "crop_size"}, pctx);
    std::string mode = to_string(c.preprocessing.mode);
    read(p, "mode", mode, pctx);
    c.preprocessing.mode = preprocess_mode_from_string(mode);
    read(p, "dot_radius", c.preprocessing.dot_radius, pctx);
    read(p, "heatmap_radius", c.preprocessing.heatmap_radius, pctx);
    read(p, "heatmap_floor", c.preprocessing.heatmap_floor, pctx);
    read(p, "crop_size", c.preprocessing.crop_size, pctx);
  }
  c.validate();
  return c;
}

template <typename T>
ParamStore<T> declare_model_params(const ModelConfig& c) {
  c.validate();
  const int d = c.embed_dim;
  const int n = c.frames_per_clip;
  const int patches = c.grid().patch_count();
  ParamStore<T> s;
  s.add("video.patch.weight", c.patch_vector_size(), d);
  s.add("video.patch.bias", 1, d);
  s.add("video.cls", 1, d);
  s.add("video.pos_space", patches, d);
  s.add("video.pos_time", n, d);
  for (int i = 0; i < c.video_blocks; ++i) declare_block(s, block_prefix("video", i), d, BlockKind::kDividedSpaceTime);
  s.add("video.norm.gain", 1, d);
  s.add("video.norm.bias", 1, d);

  s.add("gaze.proj.weight", 2, d);
  s.add("gaze.proj.bias", 1, d);
  s.add("gaze.cls", 1, d);
  s.add("gaze.pos", n + 1, d);
  for (int i = 0; i < c.gaze_blocks; ++i) declare_block(s, block_prefix("gaze", i), d, BlockKind::kSelfAttention);
  s.add("gaze.norm.gain", 1, d);
  s.add("gaze.norm.bias", 1, d);

  for (int i = 0; i < c.gdsq_blocks; ++i) declare_block(s, block_prefix("gdsq", i), d, BlockKind::kCrossAttention);

  s.add("head.fc1.weight", c.fusion_width(), c.hidden_width);
  s.add("head.fc1.bias", 1, c.hidden_width);
  s.add("head.fc2.weight", c.hidden_width, 2);
  s.add("head.fc2.bias", 1, 2);
  return s;
}

ParamStore<float> init_params(const ModelConfig& config, std::uint64_t seed, InitScheme scheme) {
  ParamStore<float> p = declare_model_params<float>(config);
  init_params(p, seed, scheme);
  return p;
}

template <typename T>
Matrix<T> patchify(std::span<const FrameImage> frames, int patch_size) {
  if (frames.empty()) throw ValidationError("patchify: no frames");
  const int h = frames[0].height;
  const int w = frames[0].width;
  const PatchGrid grid = make_grid(h, w, patch_size);
  const int per_frame = grid.patch_count();
  const int len = patch_size * patch_size * 3;
  Matrix<T> out(static_cast<Eigen::Index>(frames.size()) * per_frame, len);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const FrameImage& f = frames[t];
    if (f.height != h || f.width != w) throw ValidationError("patchify: frames differ in size");
    for (int r = 0; r < grid.grid_rows; ++r) {
      for (int c = 0; c < grid.grid_cols; ++c) {
        T* dst = out.row(static_cast<Eigen::Index>(t) * per_frame + grid.index(r, c)).data();
        for (int py = 0; py < patch_size; ++py) {
          const float* src = &f.values[(static_cast<std::size_t>(r * patch_size + py) * w + c * patch_size) * 3];
          for (int k = 0; k < patch_size * 3; ++k) *dst++ = static_cast<T>(src[k]);
        }
      }
    }
  }
  return out;
}

template <typename T>
ClipInput<T> prepare_input(std::span<const FrameImage> raw_frames, const GazeTrack& gaze, const ModelConfig& config) {
  if (static_cast<int>(raw_frames.size()) != config.frames_per_clip) {
    throw ValidationError("expected " + std::to_string(config.frames_per_clip) + " frames, got " +
                          std::to_string(raw_frames.size()));
  }
  if (static_cast<int>(gaze.size()) != config.frames_per_clip) {
    throw ValidationError("expected " + std::to_string(config.frames_per_clip) + " gaze points, got " +
                          std::to_string(gaze.size()));
  }
  PreprocessedClip pre = preprocess_clip(raw_frames, gaze, config.preprocessing, config.encoder_input_size);
  ClipInput<T> in;
  in.patches = patchify<T>(pre.frames, config.patch_size);
  in.gaze = gaze;
  in.gaze_in_frame = std::move(pre.gaze_in_frame);
  return in;
}

namespace graph {

template <typename T>
void encode_gaze(ParamBinder<T>& bind, const ModelConfig& config, const GazeTrack& gaze, const Regularizer& reg,
                 ModelVars<T>& out) {
  const int n = config.frames_per_clip;
  if (static_cast<int>(gaze.size()) != n) {
    throw ValidationError("encode_gaze: track has " + std::to_string(gaze.size()) + " points, expected " +
                          std::to_string(n));
  }
  Tape<T>& t = bind.tape();
  Matrix<T> coords(n, 2);
  for (int i = 0; i < n; ++i) {
    coords(i, 0) = static_cast<T>(gaze[static_cast<std::size_t>(i)].x);
    coords(i, 1) = static_cast<T>(gaze[static_cast<std::size_t>(i)].y);
  }
  const Var embedded = t.linear(t.constant(std::move(coords)), bind("gaze.proj.weight"), bind("gaze.proj.bias"));
  const Var parts[] = {bind("gaze.cls"), embedded};
  Var x = t.add(t.concat_rows(parts), bind("gaze.pos"));
  for (int i = 0; i < config.gaze_blocks; ++i) x = blocks::encoder(bind, block_prefix("gaze", i), x, config.gaze_heads, reg);
  x = t.layer_norm(x, bind("gaze.norm.gain"), bind("gaze.norm.bias"));
  out.g_cls = t.gather_rows(x, {0});
  out.gaze_tokens = t.gather_rows(x, range_rows(1, n));
}

template <typename T>
void encode_video(ParamBinder<T>& bind, const ModelConfig& config, const Matrix<T>& patches, const Regularizer& reg,
                  ModelVars<T>& out) {
  const int n = config.frames_per_clip;
  const int per_frame = config.grid().patch_count();
  if (patches.rows() != static_cast<Eigen::Index>(n) * per_frame || patches.cols() != config.patch_vector_size()) {
    throw ValidationError("encode_video: patch matrix is " + std::to_string(patches.rows()) + "x" +
                          std::to_string(patches.cols()) + ", expected " + std::to_string(n * per_frame) + "x" +
                          std::to_string(config.patch_vector_size()));
  }
  Tape<T>& t = bind.tape();
  Var e = t.linear(t.constant(patches), bind("video.patch.weight"), bind("video.patch.bias"));
  std::vector<int> space_rows;
  std::vector<int> time_rows;
  space_rows.reserve(static_cast<std::size_t>(n * per_frame));
  time_rows.reserve(static_cast<std::size_t>(n * per_frame));
  for (int f = 0; f < n; ++f) {
    for (int g = 0; g < per_frame; ++g) {
      space_rows.push_back(g);
      time_rows.push_back(f);
    }
  }
  e = t.add(e, t.add(t.gather_rows(bind("video.pos_space"), std::move(space_rows)),
                     t.gather_rows(bind("video.pos_time"), std::move(time_rows))));
  const Var parts[] = {bind("video.cls"), e};
  Var x = t.concat_rows(parts);
  const VideoLayouts layouts = video_layouts(n, per_frame);
  for (int i = 0; i < config.video_blocks; ++i) {
    x = blocks::divided_space_time(bind, block_prefix("video", i), x, config.video_heads, layouts.time,
                                   layouts.space, reg);
  }
  x = t.layer_norm(x, bind("video.norm.gain"), bind("video.norm.bias"));
  out.v_cls = t.gather_rows(x, {0});
  out.patch_tokens = t.gather_rows(x, range_rows(1, n * per_frame));
}

template <typename T>
void gdsq(ParamBinder<T>& bind, const ModelConfig& config, const GazeTrack& gaze_in_frame, const Regularizer& reg,
          ModelVars<T>& out) {
  const int n = config.frames_per_clip;
  const PatchGrid grid = config.grid();
  const int per_frame = grid.patch_count();
  Tape<T>& t = bind.tape();
  if (t.value(out.patch_tokens).rows() != static_cast<Eigen::Index>(n) * per_frame ||
      t.value(out.gaze_tokens).rows() != n || static_cast<int>(gaze_in_frame.size()) != n) {
    throw ValidationError("gdsq: token layout does not match " + std::to_string(n) + " frames of " +
                          std::to_string(per_frame) + " patches");
  }
  std::vector<int> rows;
  rows.reserve(static_cast<std::size_t>(n * config.neighborhood));
  out.selected.clear();
  for (int f = 0; f < n; ++f) {
    std::vector<int> sel = select_patch_neighborhood(grid, gaze_in_frame[static_cast<std::size_t>(f)],
                                                     config.neighborhood);
    for (int idx : sel) rows.push_back(f * per_frame + idx);
    out.selected.push_back(std::move(sel));
  }
  if (rows.size() != static_cast<std::size_t>(config.neighborhood * n)) {
    throw ValidationError("gdsq: selected token count differs from h * n");
  }
  out.selected_tokens = t.gather_rows(out.patch_tokens, std::move(rows));
  Var q = out.gaze_tokens;
  for (int m = 0; m < config.gdsq_blocks; ++m) {
    q = blocks::cross_attention(bind, block_prefix("gdsq", m), q, out.selected_tokens, config.gdsq_heads, reg);
  }
  out.s_cls = t.mean_rows(q);
}

template <typename T>
void fuse(ParamBinder<T>& bind, const ModelConfig& config, ModelVars<T>& out) {
  Tape<T>& t = bind.tape();
  std::vector<Var> parts;
  if (config.use_video) parts.push_back(out.v_cls);
  if (config.use_gdsq) parts.push_back(out.s_cls);
  if (config.use_gaze) parts.push_back(out.g_cls);
  const Var fused = parts.size() == 1 ? parts[0] : t.concat_cols(parts);
  const Var hidden = t.gelu(t.linear(fused, bind("head.fc1.weight"), bind("head.fc1.bias")));
  out.logits = t.linear(hidden, bind("head.fc2.weight"), bind("head.fc2.bias"));
}

template <typename T>
ModelVars<T> forward(ParamBinder<T>& bind, const ModelConfig& config, const ClipInput<T>& input,
                     const Regularizer& reg) {
  ModelVars<T> out;
  if (config.runs_video_encoder()) encode_video(bind, config, input.patches, reg, out);
  if (config.runs_gaze_encoder()) encode_gaze(bind, config, input.gaze, reg, out);
  if (config.use_gdsq) gdsq(bind, config, input.gaze_in_frame, reg, out);
  fuse(bind, config, out);
  return out;
}

}  // namespace graph

namespace {

ForwardTrace make_trace(const Tape<float>& tape, const graph::ModelVars<float>& vars) {
  ForwardTrace trace;
  if (vars.v_cls.valid()) trace.v_cls = tape.value(vars.v_cls);
  if (vars.s_cls.valid()) trace.s_cls = tape.value(vars.s_cls);
  if (vars.g_cls.valid()) trace.g_cls = tape.value(vars.g_cls);
  trace.selected = vars.selected;
  trace.selected_count = vars.selected_tokens.valid() ? static_cast<int>(tape.value(vars.selected_tokens).rows()) : 0;
  const MatrixF& z = tape.value(vars.logits);
  if (!z.allFinite()) throw NumericError("classify: non-finite logits");
  trace.logits = {static_cast<double>(z(0, 0)), static_cast<double>(z(0, 1))};
  return trace;
}

std::array<double, 2> softmax2(const std::array<double, 2>& z) {
  const double m = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - m);
  const double e1 = std::exp(z[1] - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

}  // namespace

GazeEncoding encode_gaze(const GazeTrack& track, const ParamStore<float>& params, const ModelConfig& config) {
  Tape<float> tape(false);
  ParamBinder<float> bind(tape, params);
  graph::ModelVars<float> vars;
  graph::encode_gaze(bind, config, track, {}, vars);
  return GazeEncoding{tape.value(vars.g_cls), tape.value(vars.gaze_tokens)};
}

VideoEncoding encode_video(std::span<const FrameImage> frames, const ParamStore<float>& params,
                           const ModelConfig& config) {
  if (static_cast<int>(frames.size()) != config.frames_per_clip) {
    throw ValidationError("encode_video: expected " + std::to_string(config.frames_per_clip) + " frames, got " +
                          std::to_string(frames.size()));
  }
  for (const auto& f : frames) {
    if (f.height != config.encoder_input_size || f.width != config.encoder_input_size) {
      throw ValidationError("encode_video: frames must be " + std::to_string(config.encoder_input_size) + "x" +
                            std::to_string(config.encoder_input_size));
    }
  }
  Tape<float> tape(false);
  ParamBinder<float> bind(tape, params);
  graph::ModelVars<float> vars;
  graph::encode_video(bind, config, patchify<float>(frames, config.patch_size), {}, vars);
  return VideoEncoding{tape.value(vars.v_cls), tape.value(vars.patch_tokens)};
}

GdsqOutput gdsq(const MatrixF& gaze_tokens, const MatrixF& patch_tokens, const GazeTrack& track,
                const PatchGrid& grid, const ModelConfig& config, const ParamStore<float>& params) {
  if (grid.patch_count() != config.grid().patch_count()) {
    throw ValidationError("gdsq: grid does not match the model configuration");
  }
  Tape<float> tape(false);
  ParamBinder<float> bind(tape, params);
  graph::ModelVars<float> vars;
  vars.gaze_tokens = tape.constant(gaze_tokens);
  vars.patch_tokens = tape.constant(patch_tokens);
  graph::gdsq(bind, config, track, {}, vars);
  GdsqOutput out;
  out.s_cls = tape.value(vars.s_cls);
  out.selected = vars.selected;
  out.selected_count = static_cast<int>(tape.value(vars.selected_tokens).rows());
  return out;
}

MatrixF gdsq_pool(const MatrixF& gaze_tokens, const MatrixF& selected_tokens, const ModelConfig& config,
                  const ParamStore<float>& params) {
  Tape<float> tape(false);
  ParamBinder<float> bind(tape, params);
  Var q = tape.constant(gaze_tokens);
  const Var s = tape.constant(selected_tokens);
  for (int m = 0; m < config.gdsq_blocks; ++m) {
    q = blocks::cross_attention(bind, block_prefix("gdsq", m), q, s, config.gdsq_heads);
  }
  return tape.value(tape.mean_rows(q));
}

Classification classify(const ClipInput<float>& input, const ParamStore<float>& params, const ModelConfig& config) {
  Tape<float> tape(false);
  ParamBinder<float> bind(tape, params);
  const auto vars = graph::forward(bind, config, input);
  Classification c;
  c.trace = make_trace(tape, vars);
  c.probabilities = softmax2(c.trace.logits);
  return c;
}

Classification classify(std::span<const FrameImage> raw_frames, const GazeTrack& track,
                        const ParamStore<float>& params, const ModelConfig& config) {
  return classify(prepare_input<float>(raw_frames, track, config), params, config);
}

VideoEncoding backbone_adapter(const TokenProvider& provider, std::span<const FrameImage> frames) {
  const ProviderInfo info = provider.info();
  if (info.token_reduction) {
    throw CapabilityError("provider '" + info.name + "' reduces tokens; dense per-frame patch tokens are required");
  }
  if (info.grid_rows < 1 || info.grid_cols < 1 || info.frames < 1 || info.dim < 1) {
    throw CapabilityError("provider '" + info.name + "' does not declare a patch grid, frame count and dimension");
  }
  if (static_cast<int>(frames.size()) != info.frames) {
    throw ValidationError("provider '" + info.name + "' expects " + std::to_string(info.frames) + " frames, got " +
                          std::to_string(frames.size()));
  }
  ProviderOutput raw = provider.encode(frames);
  const int per_frame = info.grid_rows * info.grid_cols;
  if (static_cast<int>(raw.frame_tokens.size()) != info.frames) {
    throw CapabilityError("provider '" + info.name + "' returned tokens for " +
                          std::to_string(raw.frame_tokens.size()) + " of " + std::to_string(info.frames) + " frames");
  }
  if (raw.cls.rows() != 1 || raw.cls.cols() != info.dim) {
    throw CapabilityError("provider '" + info.name + "' returned no 1x" + std::to_string(info.dim) + " class token");
  }
  VideoEncoding out;
  out.cls = std::move(raw.cls);
  out.patches.resize(static_cast<Eigen::Index>(info.frames) * per_frame, info.dim);
  for (int f = 0; f < info.frames; ++f) {
    const MatrixF& tokens = raw.frame_tokens[static_cast<std::size_t>(f)];
    if (tokens.rows() != per_frame || tokens.cols() != info.dim) {
      throw CapabilityError("provider '" + info.name + "' frame " + std::to_string(f) + " has " +
                            std::to_string(tokens.rows()) + " tokens, expected " + std::to_string(per_frame) +
                            " dense patch tokens");
    }
    out.patches.middleRows(static_cast<Eigen::Index>(f) * per_frame, per_frame) = tokens;
  }
  if (!out.patches.allFinite() || !out.cls.allFinite()) throw NumericError("provider tokens are not finite");
  return out;
}

ProviderInfo InternalVideoProvider::info() const {
  const PatchGrid g = config_.grid();
  return ProviderInfo{"internal", g.grid_rows, g.grid_cols, config_.frames_per_clip, config_.embed_dim, false};
}

ProviderOutput InternalVideoProvider::encode(std::span<const FrameImage> frames) const {
  const VideoEncoding enc = encode_video(frames, params_, config_);
  const int per_frame = config_.grid().patch_count();
  ProviderOutput out;
  out.cls = enc.cls;
  for (int f = 0; f < config_.frames_per_clip; ++f) {
    out.frame_tokens.push_back(enc.patches.middleRows(static_cast<Eigen::Index>(f) * per_frame, per_frame));
  }
  return out;
}

Classification classify_with_provider(const TokenProvider& provider, std::span<const FrameImage> frames,
                                      const GazeTrack& gaze_in_frame, const GazeTrack& gaze,
                                      const ParamStore<float>& params, const ModelConfig& config) {
  const ProviderInfo info = provider.info();
  if (info.dim != config.embed_dim || info.frames != config.frames_per_clip) {
    throw CapabilityError("provider '" + info.name + "' dimension/frame count does not match the model");
  }
  const VideoEncoding video = backbone_adapter(provider, frames);

  // The selection grid is expressed in patch units: one "pixel" per patch.
  PatchGrid grid{info.grid_rows, info.grid_cols, 1, info.grid_rows, info.grid_cols};
  Tape<float> tape(false);
  ParamBinder<float> bind(tape, params);
  graph::ModelVars<float> vars;
  vars.v_cls = tape.constant(video.cls);
  vars.patch_tokens = tape.constant(video.patches);
  if (config.runs_gaze_encoder()) graph::encode_gaze(bind, config, gaze, {}, vars);
  if (config.use_gdsq) {
    if (grid.patch_count() < config.neighborhood) throw ValidationError("provider grid smaller than h");
    std::vector<int> rows;
    for (int f = 0; f < config.frames_per_clip; ++f) {
      auto sel = select_patch_neighborhood(grid, gaze_in_frame.at(static_cast<std::size_t>(f)), config.neighborhood);
      for (int idx : sel) rows.push_back(f * grid.patch_count() + idx);
      vars.selected.push_back(std::move(sel));
    }
    vars.selected_tokens = tape.gather_rows(vars.patch_tokens, std::move(rows));
    Var q = vars.gaze_tokens;
    for (int m = 0; m < config.gdsq_blocks; ++m) {
      q = blocks::cross_attention(bind, block_prefix("gdsq", m), q, vars.selected_tokens, config.gdsq_heads);
    }
    vars.s_cls = tape.mean_rows(q);
  }
  graph::fuse(bind, config, vars);
  Classification c;
  c.trace = make_trace(tape, vars);
  c.probabilities = softmax2(c.trace.logits);
  return c;
}

#define EYECUE_INSTANTIATE(T)                                                                                   \
  template ParamStore<T> declare_model_params<T>(const ModelConfig&);                                           \
  template Matrix<T> patchify<T>(std::span<const FrameImage>, int);                                             \
  template ClipInput<T> prepare_input<T>(std::span<const FrameImage>, const GazeTrack&, const ModelConfig&);    \
  template void graph::encode_gaze(ParamBinder<T>&, const ModelConfig&, const GazeTrack&, const Regularizer&,   \
                                   graph::ModelVars<T>&);                                                       \
  template void graph::encode_video(ParamBinder<T>&, const ModelConfig&, const Matrix<T>&, const Regularizer&,  \
                                    graph::ModelVars<T>&);                                                      \
  template void graph::gdsq(ParamBinder<T>&, const ModelConfig&, const GazeTrack&, const Regularizer&,          \
                            graph::ModelVars<T>&);                                                              \
  template void graph::fuse(ParamBinder<T>&, const ModelConfig&, graph::ModelVars<T>&);                         \
  template graph::ModelVars<T> graph::forward(ParamBinder<T>&, const ModelConfig&, const ClipInput<T>&,         \
                                              const Regularizer&);

EYECUE_INSTANTIATE(float)
EYECUE_INSTANTIATE(double)

#undef EYECUE_INSTANTIATE

}  // namespace eyecue
