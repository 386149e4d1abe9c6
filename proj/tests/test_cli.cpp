#include <doctest.h>

#include <fstream>
#include <sstream>

#include "eyecue/checkpoint.hpp"
#include "eyecue/cli.hpp"
#include "eyecue/dataset.hpp"

using namespace eyecue;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

struct Workspace {
  fs::path dir;
  std::string manifest;
  std::string config;

  Workspace() : dir(fs::temp_directory_path() / "eyecue_test_cli") {
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto r = cli({"synth", "--count", "24", "--seed", "3", "--clips-per-video", "4", "--out",
                        (dir / "corpus").string()});
    REQUIRE(r.code == 0);
    manifest = (dir / "corpus" / "manifest.jsonl").string();
    config = (dir / "config.json").string();
    std::ofstream(config) << R"({"model": {"encoder_input_size": 48, "patch_size": 8, "embed_dim": 16,
      "hidden_width": 16, "gaze_heads": 4, "video_heads": 4, "gdsq_heads": 4, "video_blocks": 1, "gdsq_blocks": 1},
      "train": {"epochs": 1, "batch_size": 8}})";
  }
  ~Workspace() { fs::remove_all(dir); }

  std::string out(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("help and argument errors") {
  const auto help = cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("train") != std::string::npos);
  CHECK(cli({"sweep", "--help"}).code == 0);
  CHECK(cli({}).code == 1);
  CHECK(cli({"bogus"}).code == 1);
  CHECK(cli({"train", "--manifest"}).code == 1);
  const auto missing = cli({"eval", "--manifest", "m.jsonl"});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("--checkpoint") != std::string::npos);
}

TEST_CASE("policy and validation failures exit with status 1") {
  Workspace w;
  const auto loo = cli({"loo", "--held-out", "TrafficGaze", "--manifest", w.manifest, "--out", w.out("loo")});
  CHECK(loo.code == 1);
  CHECK(loo.err.find("TrafficGaze") != std::string::npos);
  CHECK(cli({"train", "--config", w.out("missing.json"), "--manifest", w.manifest, "--out", w.out("t")}).code == 1);
  std::ofstream(w.out("bad.json")) << R"({"model": {"embed_dims": 8}})";
  const auto bad = cli({"train", "--config", w.out("bad.json"), "--manifest", w.manifest, "--out", w.out("t")});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("embed_dims") != std::string::npos);
  CHECK(cli({"robustness", "--checkpoint", w.out("none.bin"), "--manifest", w.manifest, "--out", w.out("r")}).code ==
        1);
  CHECK(cli({"synth", "--count", "0", "--out", w.out("empty")}).code == 1);
}

TEST_CASE("flag uses a strict 0.3 threshold by default") {
  Workspace w;
  const auto r = cli({"flag", "--manifest", w.manifest, "--out", w.out("flagged.jsonl")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("(cc < 0.3)") != std::string::npos);
  const auto clips = read_manifest(w.out("flagged.jsonl"));
  REQUIRE(clips.size() == 24);
  for (const auto& c : clips) {
    REQUIRE(c.cc.has_value());
    CHECK(c.flagged == is_flag_candidate(PearsonResult{*c.cc, c.degenerate}, 0.3));
  }
  // Frame paths were rewritten so the relocated manifest still loads.
  CHECK_NOTHROW(load_frames(clips[0], fs::path(w.out("flagged.jsonl")).parent_path()));
}

TEST_CASE("train, eval and the analysis commands") {
  Workspace w;
  const auto t = cli({"train", "--config", w.config, "--manifest", w.manifest, "--out", w.out("run"), "--seed", "4"});
  REQUIRE(t.code == 0);
  for (const char* f : {"config.json", "checkpoint.bin", "history.csv", "metrics.json", "roc.svg", "confusion.svg",
                        "predictions.json", "run_manifest.json", "train_manifest.jsonl", "test_manifest.jsonl"}) {
    CHECK(fs::exists(fs::path(w.out("run")) / f));
  }
  CHECK(read_json(fs::path(w.out("run")) / "config.json").at("train").at("seed") == 4);
  const Checkpoint ck = load_checkpoint(fs::path(w.out("run")) / "checkpoint.bin");
  CHECK(ck.config.embed_dim == 16);

  const std::string checkpoint = (fs::path(w.out("run")) / "checkpoint.bin").string();
  CHECK(cli({"eval", "--checkpoint", checkpoint, "--manifest", w.manifest, "--out", w.out("eval")}).code == 0);
  const auto rob = cli({"robustness", "--checkpoint", checkpoint, "--manifest", w.manifest, "--out", w.out("rob")});
  REQUIRE(rob.code == 0);
  const auto rows = read_json(fs::path(w.out("rob")) / "metrics.json").at("rows");
  REQUIRE(rows.size() == 3);
  CHECK(rows.at(2).at("level_px") == 100.0);
  CHECK(cli({"scenario", "--checkpoint", checkpoint, "--manifest", w.manifest, "--out", w.out("scn")}).code == 0);
}

TEST_CASE("sweep runs the default grid") {
  Workspace w;
  const auto r = cli({"sweep", "--config", w.config, "--manifest", w.manifest, "--out", w.out("sweep")});
  REQUIRE(r.code == 0);
  const auto cells = read_json(fs::path(w.out("sweep")) / "metrics.json").at("cells");
  REQUIRE(cells.size() == 8);
  CHECK(cells.at(0).at("name") == "frames=8,h=1");
  CHECK(cells.at(7).at("name") == "frames=16,h=25");
  CHECK(fs::exists(fs::path(w.out("sweep")) / "sweep.svg"));

  // The default model's 4x4 patch grid cannot host h=25; nothing is trained.
  const auto small = cli({"sweep", "--manifest", w.manifest, "--out", w.out("sweep2"), "--h", "25"});
  CHECK(small.code == 1);
  CHECK(small.err.find("h=25") != std::string::npos);
  CHECK_FALSE(fs::exists(fs::path(w.out("sweep2")) / "metrics.json"));
}

TEST_CASE("ablation subset") {
  Workspace w;
  const auto r = cli({"ablate", "--config", w.config, "--manifest", w.manifest, "--out", w.out("abl"), "--rows",
                      "gaze,gaze+video+gdsq"});
  REQUIRE(r.code == 0);
  const auto cells = read_json(fs::path(w.out("abl")) / "metrics.json").at("cells");
  REQUIRE(cells.size() == 2);
  CHECK(cells.at(1).at("reference_accuracy_percent") == 74.38);
}
