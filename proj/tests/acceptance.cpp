// Acceptance suite: one PASS/FAIL line per criterion; exits nonzero if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "eyecue/checkpoint.hpp"
#include "eyecue/dataset.hpp"
#include "eyecue/experiments.hpp"
#include "eyecue/gaze_geometry.hpp"
#include "eyecue/grad_check.hpp"
#include "eyecue/metrics.hpp"
#include "eyecue/model.hpp"
#include "eyecue/synth.hpp"
#include "eyecue/train.hpp"
#include "grad_fixtures.hpp"
#include "oracles.hpp"

using namespace eyecue;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

// ---- 1: geometry oracle ------------------------------------------------------

void geometry_oracle(Outcome& o) {
  const auto start = Clock::now();
  Rng rng(101);
  const int hs[] = {1, 5, 9, 25};
  int mismatches = 0, edge_cases = 0;
  for (int i = 0; i < 1000; ++i) {
    const int patch = 4 << uniform_index(rng, 3);
    const int rows = 5 + static_cast<int>(uniform_index(rng, 14));
    const int cols = 5 + static_cast<int>(uniform_index(rng, 14));
    const PatchGrid grid = make_grid(rows * patch, cols * patch, patch);
    const int h = hs[uniform_index(rng, 4)];
    GazePoint g{uniform01(rng), uniform01(rng)};
    // A third of the cases pin one or both coordinates to a border.
    if (i % 3 == 0) {
      const double edges[] = {0.0, 1.0, 0.5 / cols, 1.0 - 0.5 / cols};
      g.x = edges[uniform_index(rng, 4)];
      if (uniform_index(rng, 2) == 0) g.y = edges[uniform_index(rng, 2)];
      ++edge_cases;
    }
    const int center = oracle::patch_by_scan(grid, g);
    if (select_patch_neighborhood(grid, g, h) != oracle::nearest_k_scan(grid, center, h)) ++mismatches;
  }
  const double t = seconds_since(start);
  o.detail << "1000 cases (" << edge_cases << " on borders), " << mismatches << " mismatches, " << std::fixed
           << std::setprecision(2) << t << " s";
  o.require(mismatches == 0, "exact match");
  o.require(t < 10.0, "< 10 s");
}

// ---- 2: interior window shapes ---------------------------------------------

void window_shapes(Outcome& o) {
  const PatchGrid g = make_grid(224, 224, 16);
  Rng rng(102);
  int checked = 0, wrong = 0;
  for (int r = 2; r < g.grid_rows - 2; ++r) {
    for (int c = 2; c < g.grid_cols - 2; ++c) {
      const GazePoint gaze{(c + uniform01(rng)) / g.grid_cols, (r + uniform01(rng)) / g.grid_rows};
      for (int h : {1, 5, 9, 25}) {
        std::set<std::pair<int, int>> expect;
        for (int dr = -2; dr <= 2; ++dr) {
          for (int dc = -2; dc <= 2; ++dc) {
            const bool in = h == 1    ? dr == 0 && dc == 0
                            : h == 5  ? std::abs(dr) + std::abs(dc) <= 1
                            : h == 9  ? std::max(std::abs(dr), std::abs(dc)) <= 1
                                      : true;
            if (in) expect.emplace(r + dr, c + dc);
          }
        }
        std::set<std::pair<int, int>> got;
        for (int i : select_patch_neighborhood(g, gaze, h)) got.emplace(g.row_of(i), g.col_of(i));
        ++checked;
        if (got != expect) ++wrong;
      }
    }
  }
  o.detail << checked << " interior (patch, h) windows on a 14x14 grid, " << wrong << " wrong";
  o.require(wrong == 0, "center / cross / 3x3 / 5x5");
}

// ---- 3: gradient suite ------------------------------------------------------

void gradient_suite(Outcome& o) {
  const auto start = Clock::now();
  auto run = [&](const std::string& name, fixtures::GradProblem prob) {
    // Key biases have an exactly zero true gradient; they are checked in
    // absolute terms and the relative check runs on everything else.
    const auto zero = fixtures::check_key_bias_gradients(prob);
    auto rest = fixtures::without_key_bias(prob);
    const GradCheckResult r = grad_check(rest.params, rest.loss, 0.01, 1e-3, 17);
    o.detail << name << " " << std::scientific << std::setprecision(2) << r.max_relative_error << " over "
             << r.checked << " sampled, key-bias |a| " << zero.max_analytic << " |n| " << zero.max_numeric
             << "; ";
    o.require(r.max_relative_error < 1e-4, name + " < 1e-4 at " + r.worst_parameter);
    o.require(zero.max_analytic < 1e-12 && zero.max_numeric < 1e-9, name + " key-bias gradients vanish");
  };
  run("cross_attention_block", fixtures::block_problem(BlockKind::kCrossAttention, 16, 4, 4, 9, 201));
  run("encoder_block", fixtures::block_problem(BlockKind::kSelfAttention, 16, 4, 9, 9, 202));
  run("toy model", fixtures::toy_model_problem(203));
  const double t = seconds_since(start);
  o.detail << std::fixed << std::setprecision(1) << t << " s";
  o.require(t < 120.0, "< 2 min");
}

// ---- 4: GDSQ set property ---------------------------------------------------

void gdsq_set_property(Outcome& o) {
  Rng rng(104);
  ModelConfig c;
  c.encoder_input_size = 96;  // 6x6 grid, so h = 25 fits
  const int n = c.frames_per_clip;
  const PatchGrid grid = c.grid();
  const int hs[] = {1, 5, 9, 25};
  double worst = 0.0;
  int size_violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    c.neighborhood = hs[trial % 4];
    const ParamStore<float> params = init_params(c, 300 + trial, InitScheme::kDense);
    const MatrixF gaze_tokens = fixtures::random_matrix(rng, n, c.embed_dim).cast<float>();
    const MatrixF patches = fixtures::random_matrix(rng, n * grid.patch_count(), c.embed_dim).cast<float>();
    GazeTrack track;
    for (int t = 0; t < n; ++t) track.push_back({uniform01(rng), uniform01(rng)});
    const GdsqOutput out = gdsq(gaze_tokens, patches, track, grid, c, params);
    const int expected = c.neighborhood * n;
    if (out.selected_count != expected) ++size_violations;
    MatrixF selected(out.selected_count, c.embed_dim);
    int k = 0;
    for (int f = 0; f < n; ++f) {
      for (int idx : out.selected[f]) selected.row(k++) = patches.row(f * grid.patch_count() + idx);
    }
    if (k != expected) ++size_violations;
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    shuffle_in_place(perm, rng);
    MatrixF shuffled(k, c.embed_dim);
    for (int i = 0; i < k; ++i) shuffled.row(i) = selected.row(perm[i]);
    const MatrixF pooled = gdsq_pool(gaze_tokens, shuffled, c, params);
    worst = std::max(worst, static_cast<double>((pooled - out.s_cls).cwiseAbs().maxCoeff()));
  }
  o.detail << "100 forwards, max |s_CLS diff| " << std::scientific << std::setprecision(2) << worst << ", "
           << size_violations << " |S| != h*n";
  o.require(worst <= 1e-6, "invariance within 1e-6");
  o.require(size_violations == 0, "|S| = h*n");
}

// ---- 5: metrics -------------------------------------------------------------

void metrics_reproduction(Outcome& o) {
  const Confusion c{167, 75, 49, 193};
  const ClassMetrics d = distracted_metrics(c);
  const double acc = 100.0 * c.accuracy();
  o.detail << std::fixed << std::setprecision(4) << "accuracy " << acc << "%, recall " << d.recall << ", precision "
           << d.precision << " (reported 0.78, +-0.01 rounding band)";
  o.require(std::abs(acc - 74.38) <= 0.05, "accuracy 74.38 +- 0.05");
  o.require(std::abs(d.recall - 0.69) <= 0.005, "recall 0.69 +- 0.005");
  o.require(std::abs(d.precision - 0.78) <= 0.01, "precision within rounding band");
  const std::vector<double> scores{0.95, 0.9, 0.7, 0.4, 0.2, 0.1};
  const std::vector<int> labels{1, 1, 1, 0, 0, 0};
  const auto auc = roc_auc(scores, labels);
  o.detail << ", perfect-separation AUC " << (auc ? *auc : -1.0);
  o.require(auc.has_value() && *auc == 1.0, "AUC exactly 1");
}

// ---- 6: CC and flagging -----------------------------------------------------

void cc_flagging(Outcome& o) {
  Rng rng(106);
  int failures = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 80);
    std::vector<double> a(n), b(n), scaled(n);
    const double s = 0.01 + 10.0 * uniform01(rng);
    const double shift = 5.0 * standard_normal(rng);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = standard_normal(rng);
      b[i] = uniform01(rng) * a[i] + standard_normal(rng);
      scaled[i] = s * a[i] + shift;
    }
    const double ab = pearson_cc(a, b).value;
    const bool ok = ab == pearson_cc(b, a).value && ab >= -1.0 && ab <= 1.0 &&
                    std::abs(pearson_cc(scaled, b).value - ab) < 1e-9 &&
                    std::abs(ab - oracle::pearson(a, b)) < 1e-9;
    if (!ok) ++failures;
  }
  const bool strict = is_flag_candidate({0.29, false}, 0.3) && !is_flag_candidate({0.30, false}, 0.3);
  o.detail << "10000 fuzz cases, " << failures << " failures; 0.29 flagged, 0.30 " << (strict ? "not " : "")
           << "flagged";
  o.require(failures == 0, "symmetry / bounds / affine invariance");
  o.require(strict, "strict threshold");
}

// ---- 7 and 8: end to end ------------------------------------------------------

struct EndToEnd {
  bool ran = false;
  ModelConfig model;
  ParamStore<float> full_params;
  ExperimentData data;
};

void end_to_end(Outcome& o, EndToEnd& e2e) {
  const auto start = Clock::now();
  CorpusOptions corpus;
  corpus.count = 800;
  corpus.seed = 7;
  auto clips = to_labeled(generate_corpus(corpus));
  std::vector<ClipRecord> records;
  for (const auto& c : clips) records.push_back(c.record);
  const SplitResult split = balance_and_split(records, 7);
  e2e.data.train = select_clips(clips, split.train);
  e2e.data.test = select_clips(clips, split.test);

  const ModelConfig base;  // 16 frames, h = 1, M = 2
  const TrainConfig train_config;  // 15 epochs
  std::map<std::string, double> acc;
  for (const auto& [name, gaze, video, gdsq] : {std::tuple{"gaze", true, false, false},
                                                std::tuple{"video", false, true, false},
                                                std::tuple{"full", true, true, true}}) {
    ModelConfig m = base;
    m.use_gaze = gaze;
    m.use_video = video;
    m.use_gdsq = gdsq;
    const auto cell_start = Clock::now();
    TrainResult r = train(m, train_config, e2e.data.train);
    acc[name] = 100.0 * evaluate(r.params, m, e2e.data.test).metrics.accuracy;
    std::cerr << "  " << name << ": " << acc[name] << "% in " << seconds_since(cell_start) << " s\n";
    if (std::string(name) == "full") {
      e2e.model = m;
      e2e.full_params = std::move(r.params);
    }
  }
  e2e.ran = true;
  const double t = seconds_since(start);
  o.detail << std::fixed << std::setprecision(2) << "test " << e2e.data.test.size() << " clips: full " << acc["full"]
           << "%, gaze-only " << acc["gaze"] << "%, video-only " << acc["video"] << "%; " << std::setprecision(0)
           << t << " s";
  o.require(acc["full"] >= 85.0, "full >= 85%");
  o.require(acc["full"] >= acc["gaze"] + 5.0, "full >= gaze-only + 5");
  o.require(acc["full"] >= acc["video"] + 5.0, "full >= video-only + 5");
  o.require(t < 1200.0, "< 20 min");
}

void robustness_direction(Outcome& o, const EndToEnd& e2e) {
  if (!e2e.ran) {
    o.require(false, "end-to-end model unavailable");
    return;
  }
  const std::vector<double> levels{0.0, 20.0, 100.0};
  const auto rows = run_robustness(e2e.full_params, e2e.model, e2e.data.test, levels, 8);
  const double a0 = 100.0 * rows[0].metrics.accuracy;
  const double a20 = 100.0 * rows[1].metrics.accuracy;
  const double a100 = 100.0 * rows[2].metrics.accuracy;
  o.detail << std::fixed << std::setprecision(2) << "accuracy at 0/20/100 px: " << a0 << " / " << a20 << " / "
           << a100;
  o.require(a100 <= a20 + 1.0, "acc@100 <= acc@20 + 1");
}

// ---- 9: balancing and split -------------------------------------------------

void balancing_split(Outcome& o) {
  const std::pair<SourceDataset, std::pair<int, int>> table[] = {{SourceDataset::kDrEyeVE, {1485, 409}},
                                                                 {SourceDataset::kBddA, {424, 210}},
                                                                 {SourceDataset::kDada2000, {463, 164}},
                                                                 {SourceDataset::kTrafficGaze, {481, 26}}};
  std::vector<ClipRecord> clips;
  int id = 0;
  for (const auto& [src, counts] : table) {
    for (int k = 0; k < counts.first + counts.second; ++k) {
      ClipRecord c;
      c.clip_id = "clip_" + std::to_string(id++);
      c.video_id = c.clip_id;
      c.source = src;
      c.label = k < counts.first ? Label::kAttentive : Label::kDistracted;
      c.packed_frames = c.clip_id + ".f32";
      c.gaze.assign(16, GazePoint{});
      clips.push_back(std::move(c));
    }
  }
  const SplitResult s = balance_and_split(clips, 11);
  auto count = [](const std::vector<ClipRecord>& v, Label l) {
    return std::count_if(v.begin(), v.end(), [l](const ClipRecord& c) { return c.label == l; });
  };
  const auto train_d = count(s.train, Label::kDistracted), train_a = count(s.train, Label::kAttentive);
  const auto test_d = count(s.test, Label::kDistracted), test_a = count(s.test, Label::kAttentive);
  double worst_quota = 0.0;
  int quota_total = 0;
  for (const auto& [src, counts] : table) {
    worst_quota = std::max(worst_quota, std::abs(s.attentive_quota.at(src) - 809.0 * counts.first / 2853.0));
    quota_total += s.attentive_quota.at(src);
  }
  const SplitResult again = balance_and_split(clips, 11);
  const bool deterministic = again.train == s.train && again.test == s.test;
  o.detail << "pool " << s.distracted_count << "+" << quota_total << ", train " << train_d << "/" << train_a
           << ", test " << test_d << "/" << test_a << ", max quota deviation " << std::fixed << std::setprecision(3)
           << worst_quota << ", " << (deterministic ? "deterministic" : "NOT deterministic");
  o.require(s.distracted_count == 809 && quota_total == 809, "809 + 809 pool");
  o.require(train_d == 566 && train_a == 566 && test_d == 243 && test_a == 243, "566/243 per class");
  o.require(worst_quota <= 1.0, "quotas within +-1");
  o.require(deterministic, "deterministic per seed");
}

// ---- 10: determinism ----------------------------------------------------------

void determinism(Outcome& o) {
  CorpusOptions corpus;
  corpus.count = 48;
  corpus.seed = 21;
  const auto clips = to_labeled(generate_corpus(corpus));
  std::vector<ClipRecord> records;
  for (const auto& c : clips) records.push_back(c.record);
  const SplitResult split = balance_and_split(records, 3);
  const auto train_clips = select_clips(clips, split.train);
  const auto test_clips = select_clips(clips, split.test);
  ModelConfig m;
  m.embed_dim = 32;
  m.hidden_width = 32;
  m.dropout = 0.1;
  TrainConfig t;
  t.epochs = 3;
  t.batch_size = 8;
  t.learning_rate = 1e-3;
  t.seed = 5;
  std::vector<std::string> checkpoints, reports;
  for (int run = 0; run < 2; ++run) {
    const TrainResult r = train(m, t, train_clips);
    checkpoints.push_back(serialize_checkpoint(m, r.params));
    reports.push_back(to_json(evaluate(r.params, m, test_clips).metrics).dump());
  }
  o.detail << "checkpoint " << checkpoints[0].size() << " bytes, "
           << (checkpoints[0] == checkpoints[1] ? "identical" : "DIFFERENT") << "; metrics report "
           << (reports[0] == reports[1] ? "identical" : "DIFFERENT");
  o.require(checkpoints[0] == checkpoints[1], "bit-identical checkpoints");
  o.require(reports[0] == reports[1], "identical metric reports");
}

}  // namespace

int main() {
  EndToEnd e2e;
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"geometry oracle", geometry_oracle},
      {"interior window shapes", window_shapes},
      {"gradient suite", gradient_suite},
      {"GDSQ set property", gdsq_set_property},
      {"metrics reproduction", metrics_reproduction},
      {"CC and flagging", cc_flagging},
      {"end-to-end synthetic", [&e2e](Outcome& o) { end_to_end(o, e2e); }},
      {"robustness direction", [&e2e](Outcome& o) { robustness_direction(o, e2e); }},
      {"balancing and split", balancing_split},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << (i + 1) << " (" << criteria[i].first
              << "): " << o.detail.str() << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
