#include "eyecue/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <regex>

#include "eyecue/errors.hpp"
#include "eyecue/image_io.hpp"
#include "eyecue/json_util.hpp"

namespace eyecue {

namespace {

ApiResponse json_response(int status, const nlohmann::json& j) { return {status, "application/json", j.dump()}; }

ApiResponse error_response(int status, const std::string& kind, const std::string& message) {
  return json_response(status, {{"error", kind}, {"message", message}});
}

nlohmann::json map_json(const DensityMap& m) {
  return {{"width", m.width}, {"height", m.height}, {"cells", m.cells}};
}

int parse_int(const std::map<std::string, std::string>& q, const std::string& key, int fallback, int lo, int hi) {
  auto it = q.find(key);
  if (it == q.end()) return fallback;
  try {
    std::size_t used = 0;
    const int v = std::stoi(it->second, &used);
    if (used != it->second.size() || v < lo || v > hi) throw std::out_of_range(key);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("query parameter '" + key + "' must be an integer in [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]");
  }
}

double parse_positive(const std::map<std::string, std::string>& q, const std::string& key, double fallback) {
  auto it = q.find(key);
  if (it == q.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size() || !(v > 0.0) || !std::isfinite(v)) throw std::out_of_range(key);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("query parameter '" + key + "' must be a positive number");
  }
}

std::string query_value(const std::map<std::string, std::string>& q, const std::string& key) {
  auto it = q.find(key);
  return it == q.end() ? std::string() : it->second;
}

}  // namespace

LabelingService::LabelingService(std::vector<ClipRecord> clips, std::filesystem::path frames_dir,
                                 std::filesystem::path log_path, std::vector<ProtocolRow> protocol,
                                 DensityMapSpec density)
    : frames_dir_(std::move(frames_dir)), density_(density), store_(clips, std::move(log_path), std::move(protocol)) {}

LabelingService::~LabelingService() = default;

nlohmann::json LabelingService::label_state(const std::string& clip_id, const std::string& viewer) const {
  const auto latest = store_.latest_for_clip(clip_id);
  nlohmann::json state;
  auto mine = viewer.empty() ? latest.end() : latest.find(viewer);
  state["mine"] = mine == latest.end() ? nlohmann::json(nullptr) : nlohmann::json(to_string(mine->second.label));
  nlohmann::json others = nlohmann::json::array();
  for (const auto& [annotator, record] : latest) {
    if (annotator == viewer) continue;
    nlohmann::json o{{"annotator_id", annotator}, {"labeled", true}};
    // Other annotators' choices stay hidden until the viewer has labeled.
    if (mine != latest.end()) o["label"] = to_string(record.label);
    others.push_back(std::move(o));
  }
  state["others"] = std::move(others);
  state["labeled_by"] = static_cast<int>(latest.size());
  return state;
}

const DensityMap& LabelingService::video_map(const std::string& video_id) {
  std::lock_guard lock(video_maps_mutex_);
  auto it = video_maps_.find(video_id);
  if (it != video_maps_.end()) return it->second;
  std::vector<ClipRecord> group;
  for (const auto& c : store_.clips()) {
    if (c.video_id == video_id) group.push_back(c);
  }
  return video_maps_.emplace(video_id, whole_video_map(group, density_)).first->second;
}

ApiResponse LabelingService::list_clips(const ApiRequest& r) {
  const std::string status = query_value(r.query, "status").empty() ? "flagged" : query_value(r.query, "status");
  if (status != "flagged" && status != "all") {
    throw ValidationError("status must be 'flagged' or 'all'");
  }
  const std::string unlabeled_by = query_value(r.query, "unlabeled_by");
  const std::string viewer = unlabeled_by.empty() ? query_value(r.query, "annotator") : unlabeled_by;
  const int page = parse_int(r.query, "page", 0, 0, 1 << 30);
  const int page_size = parse_int(r.query, "page_size", 50, 1, 1000);

  std::vector<const ClipRecord*> matches;
  for (const auto& c : store_.clips()) {
    if (status == "flagged" && !c.flagged) continue;
    if (!unlabeled_by.empty() && store_.latest(c.clip_id, unlabeled_by)) continue;
    matches.push_back(&c);
  }
  nlohmann::json items = nlohmann::json::array();
  const std::size_t begin = static_cast<std::size_t>(page) * static_cast<std::size_t>(page_size);
  for (std::size_t i = begin; i < std::min(matches.size(), begin + static_cast<std::size_t>(page_size)); ++i) {
    const ClipRecord& c = *matches[i];
    items.push_back({{"clip_id", c.clip_id},
                     {"video_id", c.video_id},
                     {"cc", c.cc ? nlohmann::json(*c.cc) : nlohmann::json(nullptr)},
                     {"flagged", c.flagged},
                     {"degenerate", c.degenerate},
                     {"scene", to_string(c.scene)},
                     {"time_of_day", to_string(c.time_of_day)},
                     {"weather", to_string(c.weather)},
                     {"source_dataset", to_string(c.source)},
                     {"label_state", label_state(c.clip_id, viewer)}});
  }
  return json_response(200, {{"clips", items}, {"page", page}, {"page_size", page_size}, {"total", matches.size()}});
}

ApiResponse LabelingService::clip_detail(const std::string& id, const ApiRequest& r) {
  const ClipRecord* c = store_.find_clip(id);
  if (c == nullptr) return error_response(404, "not_found", "unknown clip '" + id + "'");
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t t = 0; t < c->gaze.size(); ++t) frames.push_back("/api/clips/" + id + "/frames/" + std::to_string(t));
  nlohmann::json gaze = nlohmann::json::array();
  for (const auto& g : c->gaze) gaze.push_back({g.x, g.y});
  return json_response(200, {{"clip_id", c->clip_id},
                             {"video_id", c->video_id},
                             {"source_dataset", to_string(c->source)},
                             {"scene", to_string(c->scene)},
                             {"time_of_day", to_string(c->time_of_day)},
                             {"weather", to_string(c->weather)},
                             {"frames", frames},
                             {"gaze", gaze},
                             {"cc", c->cc ? nlohmann::json(*c->cc) : nlohmann::json(nullptr)},
                             {"flagged", c->flagged},
                             {"degenerate", c->degenerate},
                             {"clip_density_map", map_json(density_map(c->gaze, density_))},
                             {"video_density_map", map_json(video_map(c->video_id))},
                             {"label_state", label_state(c->clip_id, query_value(r.query, "annotator"))}});
}

ApiResponse LabelingService::frame_image(const std::string& id, const std::string& t_text, const ApiRequest& r) {
  const ClipRecord* c = store_.find_clip(id);
  if (c == nullptr) return error_response(404, "not_found", "unknown clip '" + id + "'");
  int t = -1;
  try {
    std::size_t used = 0;
    t = std::stoi(t_text, &used);
    if (used != t_text.size()) t = -1;
  } catch (const std::exception&) {
    t = -1;
  }
  if (t < 0 || t >= static_cast<int>(c->gaze.size())) {
    return error_response(404, "not_found", "clip '" + id + "' has no frame " + t_text);
  }
  const std::vector<FrameImage> frames = load_frames(*c, frames_dir_);
  FrameImage frame = frames[static_cast<std::size_t>(t)];
  const GazePoint g = c->gaze[static_cast<std::size_t>(t)];
  const std::string overlay = query_value(r.query, "overlay");
  if (overlay == "dot") {
    frame = render_dot_overlay(frame, g, parse_positive(r.query, "radius", PreprocessSpec{}.dot_radius));
  } else if (overlay == "heatmap") {
    frame = render_heatmap_mask(frame, g, parse_positive(r.query, "radius", PreprocessSpec{}.heatmap_radius),
                                PreprocessSpec{}.heatmap_floor);
  } else if (!overlay.empty() && overlay != "none") {
    throw ValidationError("overlay must be 'dot', 'heatmap' or 'none'");
  }
  return {200, "image/bmp", encode_bmp(frame)};
}

ApiResponse LabelingService::post_label(const std::string& id, const ApiRequest& r) {
  if (store_.find_clip(id) == nullptr) return error_response(404, "not_found", "unknown clip '" + id + "'");
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(r.body);
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("request body must be a JSON object");
  }
  json_util::check_keys(body, {"annotator_id", "label", "protocol_row"}, "label request");
  AnnotationRecord record;
  record.clip_id = id;
  std::string label;
  json_util::read(body, "annotator_id", record.annotator_id, "label request");
  json_util::read(body, "label", label, "label request");
  json_util::read(body, "protocol_row", record.protocol_row, "label request");
  if (label.empty()) throw ValidationError("label request: missing 'label'");
  record.label = label_from_string(label);
  return json_response(201, to_json(store_.record_label(std::move(record))));
}

ApiResponse LabelingService::handle(const ApiRequest& r) {
  static const std::regex clip_re(R"(^/api/clips/([^/]+)$)");
  static const std::regex frame_re(R"(^/api/clips/([^/]+)/frames/([^/]+)$)");
  static const std::regex label_re(R"(^/api/clips/([^/]+)/label$)");
  try {
    std::smatch m;
    if (r.method == "GET") {
      if (r.path == "/api/clips") return list_clips(r);
      if (r.path == "/api/agreement") return json_response(200, to_json(compute_agreement(store_)));
      if (r.path == "/api/protocol") {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& row : store_.protocol()) rows.push_back(to_json(row));
        return json_response(200, {{"rows", rows}});
      }
      if (std::regex_match(r.path, m, frame_re)) return frame_image(m[1], m[2], r);
      if (std::regex_match(r.path, m, clip_re)) return clip_detail(m[1], r);
    } else if (r.method == "POST") {
      if (std::regex_match(r.path, m, label_re)) return post_label(m[1], r);
    }
    return error_response(404, "not_found", "no route for " + r.method + " " + r.path);
  } catch (const PolicyError& e) {
    return error_response(409, "policy", e.what());
  } catch (const ValidationError& e) {
    return error_response(400, "validation", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

void LabelingService::install_routes() {
  server_ = std::make_unique<httplib::Server>();
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    ApiRequest r{req.method, req.path, {}, req.body};
    for (const auto& [k, v] : req.params) r.query[k] = v;
    const ApiResponse out = handle(r);
    res.status = out.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(out.body, out.content_type);
  };
  server_->Get(R"(/api/.*)", forward);
  server_->Post(R"(/api/.*)", forward);
  server_->Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

int LabelingService::bind(const std::string& host, int port) {
  install_routes();
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
  } else {
    port_ = server_->bind_to_port(host, port) ? port : -1;
  }
  if (port_ < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return port_;
}

void LabelingService::run() {
  if (!server_) throw std::logic_error("LabelingService::run before bind");
  server_->listen_after_bind();
}

void LabelingService::listen(const std::string& host, int port) {
  bind(host, port);
  run();
}

void LabelingService::stop() {
  if (server_) server_->stop();
}

}  // namespace eyecue
