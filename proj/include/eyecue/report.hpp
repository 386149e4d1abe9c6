#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "eyecue/metrics.hpp"
#include "eyecue/train.hpp"

namespace eyecue {

std::string svg_roc(const std::vector<RocPoint>& roc, std::optional<double> auc);
std::string svg_confusion(const Confusion& c);

struct BarValue {
  std::string label;
  double value = 0.0;                 // fraction in [0, 1]
  std::optional<double> reference;    // fraction in [0, 1], drawn as a tick
};

std::string svg_bar_chart(const std::string& title, const std::vector<BarValue>& bars);

std::string history_csv(const std::vector<EpochRecord>& history);

/// 64-bit FNV-1a of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

/// Output directory of one CLI run. The resolved config is written on
/// creation, run_manifest.json (with timestamps) on finish(); other files
/// carry no timestamps so reruns compare byte for byte.
class RunDirectory {
 public:
  RunDirectory(std::filesystem::path dir, std::string command, nlohmann::json config, std::string config_path = {});

  const std::filesystem::path& path() const { return dir_; }
  void write_json(const std::string& name, const nlohmann::json& j) const;
  void write_text(const std::string& name, const std::string& text) const;
  void finish() const;

 private:
  std::filesystem::path dir_;
  std::string command_;
  nlohmann::json config_;
  std::string config_path_;
  std::string started_;
};

}  // namespace eyecue
