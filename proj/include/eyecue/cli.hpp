#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "eyecue/model.hpp"
#include "eyecue/train.hpp"

namespace eyecue {

/// Contents of a --config file:
///   {"model": {...}, "train": {...}, "split_seed": 0}
/// Every section is optional; missing fields keep their defaults.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t split_seed = 0;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

/// Exit codes: 0 success, 1 validation / policy / usage error, 2 internal error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace eyecue
