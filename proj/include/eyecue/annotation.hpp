#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eyecue/dataset.hpp"

namespace eyecue {

inline constexpr const char* kExpertAnnotator = "expert";

struct ProtocolRow {
  std::string id;
  Scene scene = Scene::kCity;
  std::string driving_behavior;
  std::string gaze_behavior;
  Label label = Label::kAttentive;
};

std::vector<ProtocolRow> parse_protocol(const nlohmann::json& j);
std::vector<ProtocolRow> load_protocol(const std::filesystem::path& path);
/// The copy bundled with the source tree.
std::filesystem::path default_protocol_path();
nlohmann::json to_json(const ProtocolRow& row);

struct AnnotationRecord {
  std::string clip_id;
  std::string annotator_id;
  Label label = Label::kUnlabeled;
  std::string timestamp;     // ISO 8601 UTC; filled in when empty
  std::string protocol_row;  // optional ProtocolRow id

  bool operator==(const AnnotationRecord&) const = default;
};

nlohmann::json to_json(const AnnotationRecord& r);
AnnotationRecord annotation_from_json(const nlohmann::json& j);

std::string utc_timestamp();

/// Append-only label log. With a log path, every accepted record is written
/// as one JSON line before it becomes visible, and construction replays the
/// existing log. All methods are safe to call concurrently; writes are
/// serialized.
class AnnotationStore {
 public:
  AnnotationStore(std::span<const ClipRecord> clips, std::filesystem::path log_path = {},
                  std::vector<ProtocolRow> protocol = {});

  /// Throws ValidationError (unknown clip, bad label or protocol row) or
  /// PolicyError (clip not flagged for review).
  AnnotationRecord record_label(AnnotationRecord record);

  std::vector<AnnotationRecord> log() const;
  /// Latest record per annotator for one clip.
  std::map<std::string, AnnotationRecord> latest_for_clip(const std::string& clip_id) const;
  std::optional<AnnotationRecord> latest(const std::string& clip_id, const std::string& annotator_id) const;
  /// Expert label if present, else the label all annotators agree on.
  std::optional<Label> final_label(const std::string& clip_id) const;

  const ClipRecord* find_clip(const std::string& clip_id) const;
  std::span<const ClipRecord> clips() const { return clips_; }
  const std::vector<ProtocolRow>& protocol() const { return protocol_; }

 private:
  void validate(const AnnotationRecord& r) const;
  void apply(const AnnotationRecord& r);

  std::vector<ClipRecord> clips_;
  std::map<std::string, std::size_t> clip_index_;
  std::vector<ProtocolRow> protocol_;
  std::filesystem::path log_path_;
  std::vector<AnnotationRecord> log_;
  std::map<std::string, std::map<std::string, std::size_t>> latest_;  // clip -> annotator -> log index
  mutable std::mutex mutex_;
};

struct Disagreement {
  std::string clip_id;
  std::map<std::string, Label> labels;  // annotator -> label
};

struct AgreementResult {
  int eligible = 0;   // clips with >= 2 non-expert latest labels
  int agreeing = 0;
  std::optional<double> fraction;  // undefined with no eligible clips
  std::vector<Disagreement> disagreements;
};

AgreementResult compute_agreement(const AnnotationStore& store);
nlohmann::json to_json(const AgreementResult& a);

}  // namespace eyecue
