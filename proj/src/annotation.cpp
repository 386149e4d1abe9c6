#include "eyecue/annotation.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <sstream>

#include "eyecue/errors.hpp"
#include "eyecue/image_io.hpp"
#include "eyecue/json_util.hpp"

namespace eyecue {

std::vector<ProtocolRow> parse_protocol(const nlohmann::json& j) {
  json_util::check_keys(j, {"schema_version", "rows"}, "protocol");
  if (!j.contains("rows") || !j.at("rows").is_array()) throw ValidationError("protocol: 'rows' must be a list");
  std::vector<ProtocolRow> rows;
  for (const auto& r : j.at("rows")) {
    json_util::check_keys(r, {"id", "scene", "driving_behavior", "gaze_behavior", "label"}, "protocol row");
    ProtocolRow row;
    std::string scene, label;
    json_util::read(r, "id", row.id, "protocol row");
    json_util::read(r, "scene", scene, "protocol row");
    json_util::read(r, "driving_behavior", row.driving_behavior, "protocol row");
    json_util::read(r, "gaze_behavior", row.gaze_behavior, "protocol row");
    json_util::read(r, "label", label, "protocol row");
    if (row.id.empty()) throw ValidationError("protocol row: missing id");
    row.scene = scene_from_string(scene);
    row.label = label_from_string(label);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<ProtocolRow> load_protocol(const std::filesystem::path& path) {
  try {
    return parse_protocol(nlohmann::json::parse(read_file_bytes(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::filesystem::path default_protocol_path() { return std::filesystem::path(EYECUE_DATA_DIR) / "protocol.json"; }

nlohmann::json to_json(const ProtocolRow& row) {
  return {{"id", row.id},
          {"scene", to_string(row.scene)},
          {"driving_behavior", row.driving_behavior},
          {"gaze_behavior", row.gaze_behavior},
          {"label", to_string(row.label)}};
}

nlohmann::json to_json(const AnnotationRecord& r) {
  return {{"clip_id", r.clip_id},
          {"annotator_id", r.annotator_id},
          {"label", to_string(r.label)},
          {"timestamp", r.timestamp},
          {"protocol_row", r.protocol_row}};
}

AnnotationRecord annotation_from_json(const nlohmann::json& j) {
  const std::string ctx = "annotation";
  json_util::check_keys(j, {"clip_id", "annotator_id", "label", "timestamp", "protocol_row"}, ctx);
  AnnotationRecord r;
  std::string label;
  json_util::read(j, "clip_id", r.clip_id, ctx);
  json_util::read(j, "annotator_id", r.annotator_id, ctx);
  json_util::read(j, "label", label, ctx);
  json_util::read(j, "timestamp", r.timestamp, ctx);
  json_util::read(j, "protocol_row", r.protocol_row, ctx);
  if (label.empty()) throw ValidationError("annotation: missing label");
  r.label = label_from_string(label);
  return r;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

AnnotationStore::AnnotationStore(std::span<const ClipRecord> clips, std::filesystem::path log_path,
                                 std::vector<ProtocolRow> protocol)
    : clips_(clips.begin(), clips.end()), protocol_(std::move(protocol)), log_path_(std::move(log_path)) {
  for (std::size_t i = 0; i < clips_.size(); ++i) {
    if (!clip_index_.emplace(clips_[i].clip_id, i).second) {
      throw ValidationError("duplicate clip id '" + clips_[i].clip_id + "'");
    }
  }
  if (log_path_.empty() || !std::filesystem::exists(log_path_)) return;
  std::istringstream in(read_file_bytes(log_path_));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      AnnotationRecord r = annotation_from_json(nlohmann::json::parse(line));
      validate(r);
      apply(r);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(log_path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const std::runtime_error& e) {
      throw ValidationError(log_path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

const ClipRecord* AnnotationStore::find_clip(const std::string& clip_id) const {
  auto it = clip_index_.find(clip_id);
  return it == clip_index_.end() ? nullptr : &clips_[it->second];
}

void AnnotationStore::validate(const AnnotationRecord& r) const {
  const ClipRecord* clip = find_clip(r.clip_id);
  if (clip == nullptr) throw ValidationError("unknown clip '" + r.clip_id + "'");
  if (r.annotator_id.empty()) throw ValidationError("annotator_id must be non-empty");
  if (r.label == Label::kUnlabeled) {
    throw ValidationError("label must be one of attentive, distracted, erroneous");
  }
  if (!r.protocol_row.empty() && !protocol_.empty()) {
    bool known = false;
    for (const auto& row : protocol_) known = known || row.id == r.protocol_row;
    if (!known) throw ValidationError("unknown protocol row '" + r.protocol_row + "'");
  }
  if (!clip->flagged) {
    throw PolicyError("clip '" + r.clip_id + "' is not flagged for review; only flagged clips are annotated");
  }
}

void AnnotationStore::apply(const AnnotationRecord& r) {
  log_.push_back(r);
  latest_[r.clip_id][r.annotator_id] = log_.size() - 1;
}

AnnotationRecord AnnotationStore::record_label(AnnotationRecord record) {
  if (record.timestamp.empty()) record.timestamp = utc_timestamp();
  std::lock_guard lock(mutex_);
  validate(record);
  if (!log_path_.empty()) {
    if (log_path_.has_parent_path()) std::filesystem::create_directories(log_path_.parent_path());
    std::ofstream out(log_path_, std::ios::app);
    out << to_json(record).dump() << '\n';
    out.flush();
    if (!out) throw std::runtime_error("failed to append to " + log_path_.string());
  }
  apply(record);
  return record;
}

std::vector<AnnotationRecord> AnnotationStore::log() const {
  std::lock_guard lock(mutex_);
  return log_;
}

std::map<std::string, AnnotationRecord> AnnotationStore::latest_for_clip(const std::string& clip_id) const {
  std::lock_guard lock(mutex_);
  std::map<std::string, AnnotationRecord> out;
  auto it = latest_.find(clip_id);
  if (it == latest_.end()) return out;
  for (const auto& [annotator, idx] : it->second) out.emplace(annotator, log_[idx]);
  return out;
}

std::optional<AnnotationRecord> AnnotationStore::latest(const std::string& clip_id,
                                                        const std::string& annotator_id) const {
  auto all = latest_for_clip(clip_id);
  auto it = all.find(annotator_id);
  if (it == all.end()) return std::nullopt;
  return it->second;
}

std::optional<Label> AnnotationStore::final_label(const std::string& clip_id) const {
  const auto all = latest_for_clip(clip_id);
  if (auto it = all.find(kExpertAnnotator); it != all.end()) return it->second.label;
  std::optional<Label> agreed;
  for (const auto& [annotator, r] : all) {
    if (agreed && *agreed != r.label) return std::nullopt;
    agreed = r.label;
  }
  return agreed;
}

AgreementResult compute_agreement(const AnnotationStore& store) {
  AgreementResult result;
  for (const auto& clip : store.clips()) {
    std::map<std::string, Label> labels;
    for (const auto& [annotator, r] : store.latest_for_clip(clip.clip_id)) {
      if (annotator != kExpertAnnotator) labels.emplace(annotator, r.label);
    }
    if (labels.size() < 2) continue;
    ++result.eligible;
    const Label first = labels.begin()->second;
    const bool agree = std::all_of(labels.begin(), labels.end(), [first](const auto& kv) { return kv.second == first; });
    if (agree) {
      ++result.agreeing;
    } else {
      result.disagreements.push_back({clip.clip_id, labels});
    }
  }
  if (result.eligible > 0) result.fraction = static_cast<double>(result.agreeing) / result.eligible;
  return result;
}

nlohmann::json to_json(const AgreementResult& a) {
  nlohmann::json dis = nlohmann::json::array();
  for (const auto& d : a.disagreements) {
    nlohmann::json labels = nlohmann::json::object();
    for (const auto& [annotator, label] : d.labels) labels[annotator] = to_string(label);
    dis.push_back({{"clip_id", d.clip_id}, {"labels", labels}});
  }
  return {{"eligible", a.eligible},
          {"agreeing", a.agreeing},
          {"agreement", a.fraction ? nlohmann::json(*a.fraction) : nlohmann::json(nullptr)},
          {"defined", a.fraction.has_value()},
          {"disagreements", dis}};
}

}  // namespace eyecue
