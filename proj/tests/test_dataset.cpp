#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "eyecue/dataset.hpp"
#include "eyecue/errors.hpp"
#include "eyecue/rng.hpp"
#include "oracles.hpp"

using namespace eyecue;

namespace {

std::vector<std::string> frame_names(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("f" + std::to_string(i) + ".ppm");
  return out;
}

std::vector<GazeSample> gaze_per_frame(int n) {
  std::vector<GazeSample> g;
  for (int i = 0; i < n; ++i) g.push_back({static_cast<double>(i), {i / 200.0, 0.5}});
  return g;
}

ClipRecord labeled(const std::string& id, SourceDataset s, Label l) {
  ClipRecord c;
  c.clip_id = id;
  c.video_id = id;
  c.source = s;
  c.label = l;
  c.packed_frames = id + ".f32";
  c.gaze.assign(kClipFrames, GazePoint{});
  return c;
}

ClipRecord with_gaze(const std::string& id, const std::string& video, std::vector<GazePoint> gaze) {
  ClipRecord c;
  c.clip_id = id;
  c.video_id = video;
  c.packed_frames = id + ".f32";
  c.gaze = std::move(gaze);
  return c;
}

std::filesystem::path temp_dir() {
  auto d = std::filesystem::temp_directory_path() / "eyecue_test_dataset";
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("segment_clips drops the trailing remainder") {
  const ClipRecord meta = [] {
    ClipRecord m;
    m.video_id = "v1";
    m.source = SourceDataset::kBddA;
    m.weather = Weather::kRainy;
    return m;
  }();
  const auto r100 = segment_clips(frame_names(100), gaze_per_frame(100), 16, meta);
  CHECK(r100.clips.size() == 6);
  CHECK(r100.discarded_frames == 4);
  CHECK(r100.clips[5].clip_id == "v1_5");
  CHECK(r100.clips[1].frame_paths.front() == "f16.ppm");
  CHECK(r100.clips[0].source == SourceDataset::kBddA);
  CHECK(r100.clips[0].weather == Weather::kRainy);
  CHECK(r100.clips[0].label == Label::kUnlabeled);
  CHECK(segment_clips(frame_names(16), gaze_per_frame(16), 16, meta).clips.size() == 1);
  const auto r15 = segment_clips(frame_names(15), gaze_per_frame(15), 16, meta);
  CHECK(r15.clips.empty());
  CHECK(r15.discarded_frames == 15);
  CHECK_THROWS_AS(segment_clips(frame_names(16), {}, 16, meta), ValidationError);
}

TEST_CASE("segment_clips aligns each frame to the nearest gaze sample") {
  ClipRecord meta;
  meta.video_id = "v";
  // Samples at frames 0, 2, 4, ...: odd frames tie and take the earlier one.
  std::vector<GazeSample> g;
  for (int i = 0; i < 40; i += 2) g.push_back({static_cast<double>(i), {i / 100.0, 0.25}});
  const auto r = segment_clips(frame_names(16), g, 16, meta);
  REQUIRE(r.clips.size() == 1);
  CHECK(r.clips[0].gaze[3].x == doctest::Approx(0.02));
  CHECK(r.clips[0].gaze[4].x == doctest::Approx(0.04));
}

TEST_CASE("read_gaze_csv") {
  const auto path = temp_dir() / "gaze.csv";
  {
    std::ofstream f(path);
    f << "frame_index,x,y\n0,0.5,0.5\n1,1.5,-0.2\n";
  }
  const auto g = read_gaze_csv(path);
  REQUIRE(g.size() == 2);
  CHECK(g[1].point == GazePoint{1.0, 0.0});
  {
    std::ofstream f(path);
    f << "t,x,y\n0,0.5,0.5\n";
  }
  CHECK_THROWS_AS(read_gaze_csv(path), ValidationError);
  {
    std::ofstream f(path);
    f << "frame_index,x,y\n0,0.5,0.5\n1,abc,0.1\n";
  }
  try {
    read_gaze_csv(path);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find(":3") != std::string::npos);
  }
}

TEST_CASE("density_map matches the per-cell oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<GazePoint> pts;
    for (int i = 0; i < 16; ++i) pts.push_back({uniform01(rng), uniform01(rng)});
    const DensityMapSpec spec{40, 24, 0.5 + 2.0 * uniform01(rng)};
    const DensityMap m = density_map(pts, spec);
    const auto expect = oracle::density_map(pts, spec.width, spec.height, spec.sigma);
    for (std::size_t i = 0; i < expect.size(); ++i) REQUIRE(std::abs(m.cells[i] - expect[i]) < 1e-6);
    CHECK(m.sum() == doctest::Approx(1.0));
  }
  const DensityMap empty = density_map(std::vector<GazePoint>{});
  CHECK(empty.sum() == 0.0);
  CHECK(empty.cells.size() == 64u * 36u);
  CHECK_THROWS_AS(density_map(std::vector<GazePoint>{}, DensityMapSpec{0, 4, 1.0}), ValidationError);
}

TEST_CASE("pearson_cc: hand values and degenerate input") {
  const std::vector<double> x{1, 2, 3}, y{1, 3, 2};
  CHECK(pearson_cc(x, y).value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(pearson_cc(x, x).value == doctest::Approx(1.0));
  const std::vector<double> flat{2, 2, 2};
  const PearsonResult r = pearson_cc(flat, x);
  CHECK(r.degenerate);
  CHECK(r.value == 0.0);
  CHECK_THROWS_AS(pearson_cc(x, std::vector<double>{1, 2}), ValidationError);
}

TEST_CASE("pearson_cc properties on random vectors") {
  Rng rng(2);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 60);
    std::vector<double> a(n), b(n), scaled(n);
    const double s = 0.01 + 10.0 * uniform01(rng);
    const double shift = 5.0 * standard_normal(rng);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = standard_normal(rng);
      b[i] = 0.5 * a[i] + standard_normal(rng);
      scaled[i] = s * a[i] + shift;
    }
    const double ab = pearson_cc(a, b).value;
    REQUIRE(ab == doctest::Approx(oracle::pearson(a, b)).epsilon(1e-9));
    REQUIRE(ab == pearson_cc(b, a).value);
    REQUIRE(ab >= -1.0);
    REQUIRE(ab <= 1.0);
    REQUIRE(std::abs(pearson_cc(scaled, b).value - ab) < 1e-9);
  }
}

TEST_CASE("flagging uses a strict threshold") {
  CHECK(is_flag_candidate({0.29, false}, 0.3));
  CHECK_FALSE(is_flag_candidate({0.30, false}, 0.3));
  CHECK_FALSE(is_flag_candidate({0.31, false}, 0.3));
  CHECK(is_flag_candidate({0.9, true}, 0.3));

  // End to end: build a whole-video map with a chosen correlation to a clip.
  ClipRecord clip = with_gaze("c", "v", std::vector<GazePoint>(16, GazePoint{0.3, 0.4}));
  const DensityMapSpec spec;
  const DensityMap cm = density_map(clip.gaze, spec);
  const std::size_t n = cm.cells.size();
  double mean = 0.0;
  for (double v : cm.cells) mean += v / n;
  std::vector<double> u(n), w(n);
  double uu = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = cm.cells[i] - mean;
    uu += u[i] * u[i];
  }
  // w: centered, orthogonal to u.
  double wu = 0.0, ww = 0.0;
  for (std::size_t i = 0; i < n; ++i) w[i] = std::sin(0.37 * i);
  double wm = 0.0;
  for (double v : w) wm += v / n;
  for (auto& v : w) v -= wm;
  for (std::size_t i = 0; i < n; ++i) wu += w[i] * u[i];
  for (std::size_t i = 0; i < n; ++i) w[i] -= wu / uu * u[i];
  for (double v : w) ww += v * v;
  for (double target : {0.29, 0.31}) {
    DensityMap video{cm.width, cm.height, std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
      video.cells[i] = 1.0 + target * u[i] / std::sqrt(uu) + std::sqrt(1 - target * target) * w[i] / std::sqrt(ww);
    }
    std::vector<ClipRecord> clips{clip};
    flag_candidates(clips, video, 0.3, spec);
    REQUIRE(clips[0].cc.has_value());
    CHECK(*clips[0].cc == doctest::Approx(target).epsilon(1e-9));
    CHECK(clips[0].flagged == (target < 0.3));
  }
}

TEST_CASE("whole_video_map and flag_by_video") {
  const ClipRecord a = with_gaze("a", "v", std::vector<GazePoint>(16, GazePoint{0.2, 0.2}));
  const ClipRecord b = with_gaze("b", "v", std::vector<GazePoint>(16, GazePoint{0.8, 0.8}));
  const DensityMap single = whole_video_map(std::vector<ClipRecord>{a});
  const DensityMap ma = density_map(a.gaze);
  for (std::size_t i = 0; i < ma.cells.size(); ++i) CHECK(std::abs(single.cells[i] - ma.cells[i]) < 1e-15);
  const DensityMap same = whole_video_map(std::vector<ClipRecord>{a, a});
  for (std::size_t i = 0; i < same.cells.size(); ++i) CHECK(same.cells[i] == doctest::Approx(single.cells[i]));
  const DensityMap both = whole_video_map(std::vector<ClipRecord>{a, b});
  const DensityMap mb = density_map(b.gaze);
  CHECK(both.sum() == doctest::Approx(1.0));
  for (std::size_t i = 0; i < both.cells.size(); ++i) {
    CHECK(both.cells[i] == doctest::Approx(0.5 * (single.cells[i] + mb.cells[i])));
  }
  CHECK(whole_video_rule_from_string("all-points") == WholeVideoRule::kAllPoints);
  CHECK_THROWS_AS(whole_video_rule_from_string("median"), ValidationError);

  // Nine clips at the video's usual spot, one elsewhere: only the outlier is flagged.
  std::vector<ClipRecord> clips;
  for (int i = 0; i < 9; ++i) clips.push_back(with_gaze("n" + std::to_string(i), "v", a.gaze));
  clips.push_back(with_gaze("odd", "v", b.gaze));
  clips.push_back(with_gaze("alone", "w", b.gaze));
  flag_by_video(clips, 0.3);
  for (int i = 0; i < 9; ++i) CHECK_FALSE(clips[i].flagged);
  CHECK(clips[9].flagged);
  CHECK(*clips[10].cc == doctest::Approx(1.0));
  CHECK_FALSE(clips[10].flagged);

  std::vector<ClipRecord> empty_gaze{with_gaze("z", "v", {})};
  flag_candidates(empty_gaze, single, 0.3);
  CHECK(empty_gaze[0].degenerate);
  CHECK(empty_gaze[0].flagged);
  CHECK(*empty_gaze[0].cc == 0.0);
}

TEST_CASE("largest_remainder apportionment") {
  const std::vector<double> w{1485, 424, 463, 481};
  const auto q = largest_remainder(w, 809);
  CHECK(q == std::vector<int>{421, 120, 131, 137});
  CHECK(largest_remainder(std::vector<double>{1, 1, 1}, 2) == std::vector<int>{1, 1, 0});
  CHECK(largest_remainder(std::vector<double>{0.5, 0.5}, 0) == std::vector<int>{0, 0});
}

TEST_CASE("balance_and_split on a CogDrive-shaped manifest") {
  std::vector<ClipRecord> clips;
  const std::pair<SourceDataset, std::pair<int, int>> table[] = {{SourceDataset::kDrEyeVE, {1485, 409}},
                                                                 {SourceDataset::kBddA, {424, 210}},
                                                                 {SourceDataset::kDada2000, {463, 164}},
                                                                 {SourceDataset::kTrafficGaze, {481, 26}}};
  int id = 0;
  for (const auto& [src, counts] : table) {
    for (int i = 0; i < counts.first; ++i) clips.push_back(labeled("a" + std::to_string(id++), src, Label::kAttentive));
    for (int i = 0; i < counts.second; ++i) {
      clips.push_back(labeled("d" + std::to_string(id++), src, Label::kDistracted));
    }
  }
  clips.push_back(labeled("err", SourceDataset::kBddA, Label::kErroneous));
  clips.push_back(labeled("unl", SourceDataset::kBddA, Label::kUnlabeled));

  const SplitResult s = balance_and_split(clips, 7);
  CHECK(s.distracted_count == 809);
  auto count = [](const std::vector<ClipRecord>& v, Label l) {
    return std::count_if(v.begin(), v.end(), [l](const ClipRecord& c) { return c.label == l; });
  };
  CHECK(count(s.train, Label::kDistracted) == 566);
  CHECK(count(s.train, Label::kAttentive) == 566);
  CHECK(count(s.test, Label::kDistracted) == 243);
  CHECK(count(s.test, Label::kAttentive) == 243);
  CHECK(s.attentive_quota.at(SourceDataset::kDrEyeVE) == 421);
  CHECK(s.attentive_quota.at(SourceDataset::kTrafficGaze) == 137);
  for (const auto& [src, counts] : table) {
    CHECK(std::abs(s.attentive_quota.at(src) - 809.0 * counts.first / 2853.0) < 1.0);
  }
  std::set<std::string> ids;
  for (const auto* part : {&s.train, &s.test}) {
    for (const auto& c : *part) {
      CHECK(c.label != Label::kErroneous);
      CHECK(ids.insert(c.clip_id).second);
    }
  }
  const SplitResult again = balance_and_split(clips, 7);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  const SplitResult other = balance_and_split(clips, 8);
  CHECK(other.train != s.train);

  std::vector<ClipRecord> no_distracted{labeled("x", SourceDataset::kBddA, Label::kAttentive)};
  CHECK_THROWS_AS(balance_and_split(no_distracted, 1), ValidationError);
}

TEST_CASE("manifest round-trip and strict parsing") {
  ClipRecord c = labeled("clip_1", SourceDataset::kDada2000, Label::kDistracted);
  c.video_id = "video_1";
  c.scene = Scene::kRural;
  c.time_of_day = TimeOfDay::kNight;
  c.gaze[3] = {0.125, 0.75};
  c.cc = 0.21;
  c.flagged = true;
  ClipRecord d = labeled("clip_2", SourceDataset::kDrEyeVE, Label::kUnlabeled);
  d.packed_frames.clear();
  d.frame_paths = frame_names(16);
  const auto path = temp_dir() / "m.jsonl";
  write_manifest(std::vector<ClipRecord>{c, d}, path);
  const auto back = read_manifest(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0] == c);
  CHECK(back[1] == d);

  const std::string good = to_json(c).dump();
  auto with = [&](const std::string& key, const nlohmann::json& v) {
    nlohmann::json j = nlohmann::json::parse(good);
    j[key] = v;
    return j.dump();
  };
  CHECK_THROWS_AS(parse_manifest(with("label", "sleepy"), "m"), ValidationError);
  CHECK_THROWS_AS(parse_manifest(with("extra", 1), "m"), ValidationError);
  CHECK_THROWS_AS(parse_manifest(with("cc", 1.5), "m"), ValidationError);
  CHECK_THROWS_AS(parse_manifest(with("cc", nullptr), "m"), ValidationError);  // flagged needs cc
  CHECK_THROWS_AS(parse_manifest(with("gaze", nlohmann::json::array()), "m"), ValidationError);
  try {
    parse_manifest(good + "\n{not json}\n", "m.jsonl");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).rfind("m.jsonl:2:", 0) == 0);
  }
  CHECK(parse_manifest(good + "\n\n", "m").size() == 1);
}

TEST_CASE("enum names round-trip") {
  for (auto s : {SourceDataset::kDrEyeVE, SourceDataset::kBddA, SourceDataset::kDada2000, SourceDataset::kTrafficGaze,
                 SourceDataset::kSynthetic}) {
    CHECK(source_dataset_from_string(to_string(s)) == s);
  }
  CHECK(to_string(SourceDataset::kDrEyeVE) == "DR(eye)VE");
  CHECK(label_from_string("erroneous") == Label::kErroneous);
  CHECK(class_index(Label::kAttentive) == 0);
  CHECK(class_index(Label::kDistracted) == 1);
  CHECK(class_index(Label::kErroneous) == -1);
  try {
    scene_from_string("desert");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("highway") != std::string::npos);
  }
}
