#include "eyecue/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <csignal>
#include <iostream>
#include <sstream>

#include "eyecue/checkpoint.hpp"
#include "eyecue/errors.hpp"
#include "eyecue/experiments.hpp"
#include "eyecue/image_io.hpp"
#include "eyecue/json_util.hpp"
#include "eyecue/report.hpp"
#include "eyecue/service.hpp"
#include "eyecue/synth.hpp"

namespace eyecue {

nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"model", to_json(c.model)}, {"train", to_json(c.train)}, {"split_seed", c.split_seed}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  json_util::check_keys(j, {"model", "train", "split_seed"}, "config");
  ExperimentConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("split_seed")) {
    const auto& s = j.at("split_seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0)) {
      throw ValidationError("config: 'split_seed' must be a non-negative integer");
    }
    c.split_seed = s.get<std::uint64_t>();
  }
  c.model.validate();
  c.train.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  if (path.empty()) return {};
  try {
    return experiment_config_from_json(nlohmann::json::parse(read_file_bytes(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

namespace {

std::filesystem::path manifest_dir(const std::string& manifest) {
  const auto p = std::filesystem::absolute(manifest);
  return p.has_parent_path() ? p.parent_path() : std::filesystem::current_path();
}

/// Rewrites frame references to absolute paths so the records can be saved
/// next to run outputs.
ClipRecord absolutized(ClipRecord r, const std::filesystem::path& base) {
  auto fix = [&base](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  fix(r.packed_frames);
  for (auto& p : r.frame_paths) fix(p);
  return r;
}

struct LoadedData {
  ExperimentData data;
  std::vector<LabeledClip> all;
};

LoadedData load_split(const std::string& manifest, std::uint64_t split_seed) {
  const auto records = read_manifest(manifest);
  SplitResult split = balance_and_split(records, split_seed);
  std::vector<ClipRecord> wanted = split.train;
  wanted.insert(wanted.end(), split.test.begin(), split.test.end());
  LoadedData out;
  out.all = load_clips(wanted, manifest_dir(manifest));
  out.data.train = select_clips(out.all, split.train);
  out.data.test = select_clips(out.all, split.test);
  return out;
}

std::vector<LabeledClip> load_labeled(const std::string& manifest) {
  std::vector<ClipRecord> labeled;
  for (auto& r : read_manifest(manifest)) {
    if (class_index(r.label) >= 0) labeled.push_back(std::move(r));
  }
  if (labeled.empty()) throw ValidationError(manifest + ": no attentive/distracted clips");
  return load_clips(labeled, manifest_dir(manifest));
}

void write_split_manifests(const RunDirectory& run, const ExperimentData& data, const std::string& manifest) {
  const auto base = manifest_dir(manifest);
  for (auto [name, clips] : {std::pair{"train_manifest.jsonl", &data.train}, std::pair{"test_manifest.jsonl", &data.test}}) {
    std::vector<ClipRecord> recs;
    for (const auto& c : *clips) recs.push_back(absolutized(c.record, base));
    run.write_text(name, manifest_text(recs));
  }
}

void write_evaluation(const RunDirectory& run, const Evaluation& ev, nlohmann::json extra) {
  extra["test"] = to_json(ev.metrics);
  extra["reference"] = {{"accuracy_percent", 74.38}, {"f1", 0.74}, {"auc", 0.82}};
  run.write_json("metrics.json", extra);
  run.write_text("roc.svg", svg_roc(ev.metrics.roc, ev.metrics.auc));
  run.write_text("confusion.svg", svg_confusion(ev.metrics.confusion));
  nlohmann::json preds = nlohmann::json::array();
  for (std::size_t i = 0; i < ev.clip_ids.size(); ++i) {
    preds.push_back({{"clip_id", ev.clip_ids[i]}, {"label", ev.labels[i]}, {"score", ev.scores[i]}});
  }
  run.write_json("predictions.json", preds);
}

std::vector<BarValue> bars_of(const std::vector<CellResult>& cells) {
  std::vector<BarValue> bars;
  for (const auto& c : cells) {
    BarValue b{c.name, c.mean_accuracy(), std::nullopt};
    if (c.reference_accuracy) b.reference = *c.reference_accuracy / 100.0;
    bars.push_back(b);
  }
  return bars;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      if constexpr (std::is_integral_v<T>) {
        out.push_back(static_cast<T>(std::stoll(item, &used)));
      } else {
        out.push_back(static_cast<T>(std::stod(item, &used)));
      }
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError(std::string("--") + what + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ValidationError(std::string("--") + what + ": empty list");
  return out;
}

std::map<SourceDataset, double> parse_source_mix(const std::string& text) {
  std::map<SourceDataset, double> mix;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.rfind(':');
    const std::string name = colon == std::string::npos ? item : item.substr(0, colon);
    double weight = 1.0;
    if (colon != std::string::npos) weight = parse_list<double>(item.substr(colon + 1), "sources").front();
    mix[source_dataset_from_string(name)] = weight;
  }
  if (mix.empty()) throw ValidationError("--sources: empty list");
  return mix;
}

LabelingService* g_service = nullptr;

extern "C" void stop_service(int) {
  if (g_service != nullptr) g_service->stop();
}

struct Options {
  std::string config_path;
  std::string manifest;
  std::string out;
  std::string checkpoint;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int repeats = 1;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"EyeCue: gaze-guided cognitive distraction detection"};
  app.name("eyecue");
  app.require_subcommand(1);
  // `-h` is left free for the sweep's neighborhood list.
  app.set_help_flag("--help", "print this help and exit");
  Options o;
  auto epoch_log = [&err](const EpochRecord& r) {
    err << "epoch " << r.epoch << " loss " << r.train_loss << " acc " << r.train_accuracy;
    if (r.has_validation) err << " val_acc " << r.val_accuracy;
    err << '\n';
  };
  auto cell_log = [&err](const CellResult& c) { err << c.name << ": accuracy " << c.mean_accuracy() << '\n'; };

  // segment
  auto* segment = app.add_subcommand("segment", "cut a video's frames into fixed-length clips");
  std::string frames_dir, gaze_csv, video_id, source = "synthetic", scene = "city", tod = "day", weather = "sunny";
  int frames_per_clip = kClipFrames;
  segment->add_option("--frames-dir", frames_dir, "directory of per-frame PPM files, in name order")->required();
  segment->add_option("--gaze", gaze_csv, "gaze CSV with header frame_index,x,y")->required();
  segment->add_option("--video-id", video_id, "video identifier")->required();
  segment->add_option("--frames-per-clip", frames_per_clip, "clip length")->capture_default_str();
  segment->add_option("--source", source, "source dataset tag")->capture_default_str();
  segment->add_option("--scene", scene)->capture_default_str();
  segment->add_option("--time-of-day", tod)->capture_default_str();
  segment->add_option("--weather", weather)->capture_default_str();
  segment->add_option("--out", o.out, "output manifest")->required();

  // flag
  auto* flag = app.add_subcommand("flag", "compute clip-vs-video CC and flag candidate event clips");
  double cc_threshold = 0.3;
  std::string rule = "mean-of-clips";
  DensityMapSpec density;
  flag->add_option("--manifest", o.manifest)->required();
  flag->add_option("--out", o.out, "output manifest")->required();
  flag->add_option("--cc-threshold", cc_threshold, "flag clips with CC strictly below this")->capture_default_str();
  flag->add_option("--rule", rule, "whole-video map: mean-of-clips or all-points")->capture_default_str();
  flag->add_option("--map-width", density.width)->capture_default_str();
  flag->add_option("--map-height", density.height)->capture_default_str();
  flag->add_option("--sigma", density.sigma, "Gaussian sigma in map cells")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  CorpusOptions corpus;
  std::string sources;
  synth->add_option("--count", corpus.count)->capture_default_str();
  synth->add_option("--seed", corpus.seed)->capture_default_str();
  synth->add_option("--balance", corpus.distracted_fraction, "fraction of distracted clips")->capture_default_str();
  synth->add_option("--clips-per-video", corpus.clips_per_video)->capture_default_str();
  synth->add_option("--sources", sources, "source tags with weights, e.g. BDD-A:1,DADA-2000:1");
  synth->add_option("--out", o.out, "output directory")->required();

  auto add_training = [&o](CLI::App* cmd) {
    cmd->add_option("--config", o.config_path, "JSON config with model/train sections");
    cmd->add_option("--manifest", o.manifest)->required();
    cmd->add_option("--out", o.out, "run directory")->required();
    cmd->add_option("--repeats", o.repeats, "runs per cell")->capture_default_str();
  };

  auto* train_cmd = app.add_subcommand("train", "train on the balanced split of a manifest and evaluate");
  train_cmd->add_option("--config", o.config_path, "JSON config with model/train sections");
  train_cmd->add_option("--manifest", o.manifest)->required();
  train_cmd->add_option("--out", o.out, "run directory")->required();
  train_cmd->add_option("--seed", o.seed, "overrides train.seed")->each([&o](const std::string&) { o.seed_given = true; });

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on every labeled clip of a manifest");
  eval_cmd->add_option("--checkpoint", o.checkpoint)->required();
  eval_cmd->add_option("--manifest", o.manifest)->required();
  eval_cmd->add_option("--out", o.out, "run directory")->required();

  auto* ablate = app.add_subcommand("ablate", "train the seven branch combinations");
  std::string rows;
  add_training(ablate);
  ablate->add_option("--rows", rows, "comma-separated subset, e.g. gaze,video,gaze+video+gdsq");

  auto* sweep = app.add_subcommand("sweep", "clip length x neighborhood size grid");
  std::string frames_list = "8,16", h_list = "1,5,9,25";
  sweep->set_help_flag("--help", "print this help and exit");
  add_training(sweep);
  sweep->add_option("--frames", frames_list)->capture_default_str();
  sweep->add_option("--h", h_list)->capture_default_str();

  auto* preproc = app.add_subcommand("preproc-study", "compare gaze-guided preprocessing modes");
  add_training(preproc);

  auto* robust = app.add_subcommand("robustness", "accuracy under uniform-disk gaze noise");
  std::string levels = "0,20,100";
  robust->add_option("--checkpoint", o.checkpoint)->required();
  robust->add_option("--manifest", o.manifest)->required();
  robust->add_option("--out", o.out, "run directory")->required();
  robust->add_option("--levels", levels, "noise radii in raw-frame pixels")->capture_default_str();
  robust->add_option("--seed", o.seed)->capture_default_str();

  auto* scenario = app.add_subcommand("scenario", "accuracy per scene / time of day / weather");
  scenario->add_option("--checkpoint", o.checkpoint)->required();
  scenario->add_option("--manifest", o.manifest)->required();
  scenario->add_option("--out", o.out, "run directory")->required();

  auto* loo = app.add_subcommand("loo", "leave one source dataset out");
  std::string held_out;
  loo->add_option("--held-out", held_out, "BDD-A, DADA-2000 or DR(eye)VE")->required();
  loo->add_option("--config", o.config_path);
  loo->add_option("--manifest", o.manifest)->required();
  loo->add_option("--out", o.out, "run directory")->required();

  auto* serve = app.add_subcommand("serve", "HTTP labeling service");
  std::string host = "127.0.0.1", labels, protocol = default_protocol_path().string();
  int port = 8080;
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--manifest", o.manifest)->required();
  serve->add_option("--labels", labels, "append-only label log")->required();
  serve->add_option("--protocol", protocol, "protocol rows JSON")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  const std::vector<std::string> argv_copy = args;
  auto command_line = [&argv_copy]() {
    std::string s = "eyecue";
    for (const auto& a : argv_copy) s += " " + a;
    return s;
  };

  try {
    if (segment->parsed()) {
      std::vector<std::filesystem::path> files;
      for (const auto& entry : std::filesystem::directory_iterator(frames_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
      }
      std::sort(files.begin(), files.end());
      const auto base = std::filesystem::absolute(o.out).parent_path();
      std::vector<std::string> paths;
      for (const auto& f : files) paths.push_back(std::filesystem::relative(std::filesystem::absolute(f), base).string());
      ClipRecord meta;
      meta.video_id = video_id;
      meta.source = source_dataset_from_string(source);
      meta.scene = scene_from_string(scene);
      meta.time_of_day = time_of_day_from_string(tod);
      meta.weather = weather_from_string(weather);
      const auto gaze = read_gaze_csv(gaze_csv);
      const SegmentResult seg = segment_clips(paths, gaze, frames_per_clip, meta);
      for (const auto& w : seg.warnings) err << "warning: " << w << '\n';
      write_manifest(seg.clips, o.out);
      out << seg.clips.size() << " clips written to " << o.out << " (" << seg.discarded_frames
          << " trailing frames discarded)\n";
    } else if (flag->parsed()) {
      auto clips = read_manifest(o.manifest);
      flag_by_video(clips, cc_threshold, density, whole_video_rule_from_string(rule));
      // Frame references stay valid relative to the new manifest's directory.
      const auto from = manifest_dir(o.manifest);
      const auto to = std::filesystem::absolute(o.out).parent_path();
      if (from != to) {
        for (auto& c : clips) c = absolutized(std::move(c), from);
      }
      write_manifest(clips, o.out);
      const auto flagged = std::count_if(clips.begin(), clips.end(), [](const ClipRecord& c) { return c.flagged; });
      out << flagged << " of " << clips.size() << " clips flagged (cc < " << cc_threshold << ")\n";
    } else if (synth->parsed()) {
      if (!sources.empty()) corpus.mix.source = parse_source_mix(sources);
      auto clips = generate_corpus(corpus);
      write_corpus(o.out, clips);
      out << clips.size() << " clips written to " << (std::filesystem::path(o.out) / "manifest.jsonl").string() << '\n';
    } else if (train_cmd->parsed()) {
      ExperimentConfig cfg = load_experiment_config(o.config_path);
      if (o.seed_given) cfg.train.seed = o.seed;
      RunDirectory run(o.out, command_line(), to_json(cfg), o.config_path);
      const LoadedData loaded = load_split(o.manifest, cfg.split_seed);
      write_split_manifests(run, loaded.data, o.manifest);
      const TrainResult trained = train(cfg.model, cfg.train, loaded.data.train, epoch_log);
      save_checkpoint(run.path() / "checkpoint.bin", cfg.model, trained.params);
      run.write_text("history.csv", history_csv(trained.history));
      const Evaluation ev = evaluate(trained.params, cfg.model, loaded.data.test);
      write_evaluation(run, ev,
                       {{"best_epoch", trained.best_epoch},
                        {"train_count", loaded.data.train.size()},
                        {"test_count", loaded.data.test.size()}});
      run.finish();
      out << "test accuracy " << ev.metrics.accuracy << " (" << ev.metrics.count << " clips); outputs in " << o.out
          << '\n';
    } else if (eval_cmd->parsed()) {
      const Checkpoint ck = load_checkpoint(o.checkpoint);
      RunDirectory run(o.out, command_line(), {{"checkpoint", o.checkpoint}, {"model", to_json(ck.config)}});
      const auto clips = load_labeled(o.manifest);
      const Evaluation ev = evaluate(ck.params, ck.config, clips);
      write_evaluation(run, ev, {{"manifest", o.manifest}});
      run.finish();
      out << "accuracy " << ev.metrics.accuracy << " over " << ev.metrics.count << " clips\n";
    } else if (ablate->parsed() || sweep->parsed() || preproc->parsed()) {
      const ExperimentConfig cfg = load_experiment_config(o.config_path);
      const char* name = ablate->parsed() ? "ablation" : sweep->parsed() ? "sweep" : "preprocessing";
      nlohmann::json resolved = to_json(cfg);
      resolved["repeats"] = o.repeats;
      RunDirectory run(o.out, command_line(), resolved, o.config_path);
      const LoadedData loaded = load_split(o.manifest, cfg.split_seed);
      std::vector<CellResult> cells;
      if (ablate->parsed()) {
        std::vector<std::string> only;
        if (!rows.empty()) {
          std::stringstream ss(rows);
          for (std::string r; std::getline(ss, r, ',');) only.push_back(r);
        }
        cells = run_ablation(cfg.model, cfg.train, loaded.data, only, o.repeats, cell_log);
      } else if (sweep->parsed()) {
        const auto fs = parse_list<int>(frames_list, "frames");
        const auto hs = parse_list<int>(h_list, "h");
        cells = run_sweep(cfg.model, cfg.train, loaded.data, fs, hs, o.repeats, cell_log);
      } else {
        const int width = loaded.all.front().frames->front().width;
        cells = run_preprocessing_study(cfg.model, cfg.train, loaded.data, width, o.repeats, cell_log);
      }
      nlohmann::json table = nlohmann::json::array();
      for (const auto& c : cells) table.push_back(to_json(c));
      run.write_json("metrics.json", {{"runner", name}, {"cells", table}});
      run.write_text(std::string(name) + ".svg", svg_bar_chart(std::string(name) + " accuracy", bars_of(cells)));
      run.finish();
      for (const auto& c : cells) out << c.name << '\t' << c.mean_accuracy() << '\n';
    } else if (robust->parsed()) {
      const Checkpoint ck = load_checkpoint(o.checkpoint);
      const auto lv = parse_list<double>(levels, "levels");
      RunDirectory run(o.out, command_line(),
                       {{"checkpoint", o.checkpoint}, {"levels", lv}, {"seed", o.seed}, {"model", to_json(ck.config)}});
      const auto clips = load_labeled(o.manifest);
      const auto result = run_robustness(ck.params, ck.config, clips, lv, o.seed);
      nlohmann::json table = nlohmann::json::array();
      std::vector<BarValue> bars;
      for (const auto& r : result) {
        table.push_back(to_json(r));
        bars.push_back({std::to_string(static_cast<int>(r.level)) + " px", r.metrics.accuracy,
                        r.reference_accuracy ? std::optional<double>(*r.reference_accuracy / 100.0) : std::nullopt});
        out << r.level << '\t' << r.metrics.accuracy << '\n';
      }
      run.write_json("metrics.json", {{"runner", "robustness"}, {"rows", table}});
      run.write_text("robustness.svg", svg_bar_chart("accuracy vs gaze noise", bars));
      run.finish();
    } else if (scenario->parsed()) {
      const Checkpoint ck = load_checkpoint(o.checkpoint);
      RunDirectory run(o.out, command_line(), {{"checkpoint", o.checkpoint}, {"model", to_json(ck.config)}});
      const auto clips = load_labeled(o.manifest);
      const Evaluation ev = evaluate(ck.params, ck.config, clips);
      const ScenarioBreakdown b = scenario_breakdown(ev, clips);
      run.write_json("metrics.json", {{"runner", "scenario"}, {"overall", to_json(ev.metrics)}, {"breakdown", to_json(b)}});
      run.finish();
      for (const auto& g : b.groups) out << g.axis << '\t' << g.tag << '\t' << g.count << '\t' << g.accuracy << '\n';
      for (const auto& n : b.notes) out << "note: " << n << '\n';
    } else if (loo->parsed()) {
      const SourceDataset target = source_dataset_from_string(held_out);
      check_leave_one_out_target(target);
      const ExperimentConfig cfg = load_experiment_config(o.config_path);
      RunDirectory run(o.out, command_line(), to_json(cfg), o.config_path);
      const auto clips = load_labeled(o.manifest);
      const LeaveOneOutResult r = leave_one_out(cfg.model, cfg.train, clips, target);
      run.write_json("metrics.json", to_json(r));
      run.finish();
      out << "held out " << held_out << ": accuracy " << r.evaluation.metrics.accuracy << " F1 "
          << r.evaluation.metrics.distracted.f1 << '\n';
    } else if (serve->parsed()) {
      LabelingService service(read_manifest(o.manifest), manifest_dir(o.manifest), labels, load_protocol(protocol));
      const int bound = service.bind(host, port);
      out << "serving on http://" << host << ":" << bound << '\n' << std::flush;
      g_service = &service;
      std::signal(SIGINT, stop_service);
      std::signal(SIGTERM, stop_service);
      service.run();
      g_service = nullptr;
    }
    return 0;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const PolicyError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const CapabilityError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 2;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace eyecue
