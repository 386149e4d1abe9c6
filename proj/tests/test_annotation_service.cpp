#include <doctest.h>

#include <httplib.h>

#include <thread>

#include "eyecue/annotation.hpp"
#include "eyecue/errors.hpp"
#include "eyecue/service.hpp"
#include "eyecue/synth.hpp"

using namespace eyecue;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path dir;
  std::vector<ClipRecord> clips;
  std::string flagged;
  std::string unflagged;

  explicit Fixture(const std::string& name) : dir(fs::temp_directory_path() / name) {
    fs::remove_all(dir);
    CorpusOptions o;
    o.count = 16;
    o.seed = 12;
    o.clips_per_video = 4;
    auto corpus = generate_corpus(o);
    // Flag half of the clips explicitly so the test does not depend on the
    // synthetic gaze statistics.
    for (std::size_t i = 0; i < corpus.size(); ++i) corpus[i].record.flagged = i % 2 == 0;
    write_corpus(dir, corpus);
    clips = read_manifest(dir / "manifest.jsonl");
    flagged = clips[0].clip_id;
    unflagged = clips[1].clip_id;
  }
  ~Fixture() { fs::remove_all(dir); }

  LabelingService service() const {
    return LabelingService(clips, dir, dir / "labels.jsonl", load_protocol(default_protocol_path()));
  }
};

ApiResponse get(LabelingService& s, const std::string& path, std::map<std::string, std::string> query = {}) {
  return s.handle({"GET", path, std::move(query), ""});
}

ApiResponse post_label(LabelingService& s, const std::string& clip, const nlohmann::json& body) {
  return s.handle({"POST", "/api/clips/" + clip + "/label", {}, body.dump()});
}

std::vector<ClipRecord> flagged_records(int n) {
  std::vector<ClipRecord> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out[i].clip_id = "c" + std::to_string(i);
    out[i].video_id = "v";
    out[i].gaze.assign(16, GazePoint{0.5, 0.5});
    out[i].flagged = true;
  }
  return out;
}

}  // namespace

TEST_CASE("protocol table loads with the required fields") {
  const auto rows = load_protocol(default_protocol_path());
  REQUIRE_FALSE(rows.empty());
  int attentive = 0, distracted = 0;
  for (const auto& r : rows) {
    CHECK_FALSE(r.id.empty());
    CHECK_FALSE(r.driving_behavior.empty());
    CHECK_FALSE(r.gaze_behavior.empty());
    (r.label == Label::kAttentive ? attentive : distracted) += 1;
  }
  CHECK(attentive > 0);
  CHECK(distracted > 0);
  CHECK_THROWS_AS(parse_protocol({{"rows", {{{"id", "x"}, {"color", "red"}}}}}), ValidationError);
}

TEST_CASE("listing and detail routes") {
  Fixture f("eyecue_test_service_routes");
  LabelingService s = f.service();
  const ApiResponse list = get(s, "/api/clips");
  REQUIRE(list.status == 200);
  const auto j = nlohmann::json::parse(list.body);
  CHECK(j["total"] == 8);
  for (const auto& c : j["clips"]) CHECK(c["flagged"] == true);
  CHECK(nlohmann::json::parse(get(s, "/api/clips", {{"status", "all"}}).body)["total"] == 16);
  const auto paged = nlohmann::json::parse(get(s, "/api/clips", {{"page", "1"}, {"page_size", "3"}}).body);
  CHECK(paged["clips"].size() == 3);
  CHECK(get(s, "/api/clips", {{"status", "odd"}}).status == 400);
  CHECK(get(s, "/api/clips", {{"page_size", "0"}}).status == 400);

  const ApiResponse detail = get(s, "/api/clips/" + f.flagged);
  REQUIRE(detail.status == 200);
  const auto d = nlohmann::json::parse(detail.body);
  CHECK(d["frames"].size() == 16);
  CHECK(d["gaze"].size() == 16);
  CHECK(d["clip_density_map"]["cells"].size() == d["clip_density_map"]["width"].get<std::size_t>() *
                                                     d["clip_density_map"]["height"].get<std::size_t>());
  CHECK(d.contains("video_density_map"));
  CHECK(get(s, "/api/clips/nope").status == 404);
  CHECK(get(s, "/api/unknown").status == 404);
  CHECK(nlohmann::json::parse(get(s, "/api/protocol").body)["rows"].size() ==
        load_protocol(default_protocol_path()).size());
}

TEST_CASE("frame images and overlays") {
  Fixture f("eyecue_test_service_frames");
  LabelingService s = f.service();
  const ApiResponse plain = get(s, "/api/clips/" + f.flagged + "/frames/0");
  REQUIRE(plain.status == 200);
  CHECK(plain.content_type == "image/bmp");
  CHECK(plain.body.substr(0, 2) == "BM");
  const ApiResponse dot = get(s, "/api/clips/" + f.flagged + "/frames/0", {{"overlay", "dot"}, {"radius", "4"}});
  REQUIRE(dot.status == 200);
  CHECK(dot.body.size() == plain.body.size());
  CHECK(dot.body != plain.body);
  CHECK(get(s, "/api/clips/" + f.flagged + "/frames/0", {{"overlay", "heatmap"}}).status == 200);
  CHECK(get(s, "/api/clips/" + f.flagged + "/frames/16").status == 404);
  CHECK(get(s, "/api/clips/" + f.flagged + "/frames/x").status == 404);
  CHECK(get(s, "/api/clips/" + f.flagged + "/frames/0", {{"overlay", "blur"}}).status == 400);
  CHECK(get(s, "/api/clips/" + f.flagged + "/frames/0", {{"overlay", "dot"}, {"radius", "-1"}}).status == 400);
}

TEST_CASE("label submission validation and policy") {
  Fixture f("eyecue_test_service_labels");
  LabelingService s = f.service();
  const ApiResponse ok = post_label(s, f.flagged, {{"annotator_id", "ann1"}, {"label", "distracted"}});
  REQUIRE(ok.status == 201);
  const auto rec = nlohmann::json::parse(ok.body);
  CHECK(rec["label"] == "distracted");
  CHECK_FALSE(rec["timestamp"].get<std::string>().empty());

  CHECK(post_label(s, f.unflagged, {{"annotator_id", "ann1"}, {"label", "attentive"}}).status == 409);
  CHECK(post_label(s, f.flagged, {{"annotator_id", "ann1"}, {"label", "sleepy"}}).status == 400);
  CHECK(post_label(s, f.flagged, {{"annotator_id", "ann1"}}).status == 400);
  CHECK(post_label(s, f.flagged, {{"label", "attentive"}}).status == 400);
  CHECK(post_label(s, f.flagged, {{"annotator_id", "a"}, {"label", "attentive"}, {"extra", 1}}).status == 400);
  CHECK(post_label(s, f.flagged, {{"annotator_id", "a"}, {"label", "attentive"}, {"protocol_row", "zz"}}).status ==
        400);
  CHECK(s.handle({"POST", "/api/clips/" + f.flagged + "/label", {}, "not json"}).status == 400);
  CHECK(post_label(s, "nope", {{"annotator_id", "a"}, {"label", "attentive"}}).status == 404);
  CHECK(s.store().log().size() == 1);
}

TEST_CASE("other annotators' labels stay hidden until the viewer labels") {
  Fixture f("eyecue_test_service_hidden");
  LabelingService s = f.service();
  REQUIRE(post_label(s, f.flagged, {{"annotator_id", "ann1"}, {"label", "distracted"}}).status == 201);
  auto state = [&](const std::string& viewer) {
    return nlohmann::json::parse(get(s, "/api/clips/" + f.flagged, {{"annotator", viewer}}).body)["label_state"];
  };
  const auto before = state("ann2");
  CHECK(before["mine"].is_null());
  REQUIRE(before["others"].size() == 1);
  CHECK(before["others"][0]["labeled"] == true);
  CHECK_FALSE(before["others"][0].contains("label"));

  REQUIRE(post_label(s, f.flagged, {{"annotator_id", "ann2"}, {"label", "attentive"}}).status == 201);
  const auto after = state("ann2");
  CHECK(after["mine"] == "attentive");
  CHECK(after["others"][0]["label"] == "distracted");

  const auto todo = nlohmann::json::parse(get(s, "/api/clips", {{"unlabeled_by", "ann2"}}).body);
  CHECK(todo["total"] == 7);
}

TEST_CASE("labels survive a restart") {
  Fixture f("eyecue_test_service_restart");
  {
    LabelingService s = f.service();
    REQUIRE(post_label(s, f.flagged, {{"annotator_id", "ann1"}, {"label", "distracted"}}).status == 201);
    REQUIRE(post_label(s, f.flagged, {{"annotator_id", "ann1"}, {"label", "attentive"}}).status == 201);
  }
  LabelingService again = f.service();
  const auto log = again.store().log();
  REQUIRE(log.size() == 2);
  CHECK(again.store().latest(f.flagged, "ann1")->label == Label::kAttentive);

  std::ofstream(f.dir / "labels.jsonl", std::ios::app) << "{broken\n";
  CHECK_THROWS_AS(f.service(), ValidationError);
}

TEST_CASE("agreement fraction and expert override") {
  AnnotationStore store(flagged_records(50));
  for (int i = 0; i < 50; ++i) {
    const std::string id = "c" + std::to_string(i);
    store.record_label({id, "a", Label::kDistracted, "", ""});
    store.record_label({id, "b", i == 7 ? Label::kAttentive : Label::kDistracted, "", ""});
  }
  const AgreementResult r = compute_agreement(store);
  CHECK(r.eligible == 50);
  CHECK(r.agreeing == 49);
  CHECK(r.fraction.value() == doctest::Approx(0.98));
  REQUIRE(r.disagreements.size() == 1);
  CHECK(r.disagreements[0].clip_id == "c7");

  CHECK_FALSE(store.final_label("c7").has_value());
  CHECK(store.final_label("c8").value() == Label::kDistracted);
  store.record_label({"c7", kExpertAnnotator, Label::kAttentive, "", ""});
  CHECK(store.final_label("c7").value() == Label::kAttentive);
  store.record_label({"c8", kExpertAnnotator, Label::kAttentive, "", ""});
  CHECK(store.final_label("c8").value() == Label::kAttentive);
  // Expert labels do not count toward inter-annotator agreement.
  CHECK(compute_agreement(store).agreeing == 49);

  AnnotationStore empty(flagged_records(2));
  CHECK_FALSE(compute_agreement(empty).fraction.has_value());
}

TEST_CASE("HTTP server answers on a real socket") {
  Fixture f("eyecue_test_service_http");
  LabelingService s = f.service();
  const int port = s.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread server([&] { s.run(); });
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(10, 0);
  const auto list = client.Get("/api/clips?status=all&page_size=2");
  REQUIRE(list);
  CHECK(list->status == 200);
  CHECK(nlohmann::json::parse(list->body)["clips"].size() == 2);
  const auto posted = client.Post("/api/clips/" + f.flagged + "/label",
                                  nlohmann::json{{"annotator_id", "ann1"}, {"label", "attentive"}}.dump(),
                                  "application/json");
  REQUIRE(posted);
  CHECK(posted->status == 201);
  const auto image = client.Get("/api/clips/" + f.flagged + "/frames/3?overlay=dot");
  REQUIRE(image);
  CHECK(image->get_header_value("Content-Type") == "image/bmp");
  const auto agreement = client.Get("/api/agreement");
  REQUIRE(agreement);
  CHECK(agreement->status == 200);
  s.stop();
  server.join();
}
