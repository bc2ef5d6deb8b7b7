// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: tfuse_acceptance [--only 1,2,...] [--cli PATH] [--work DIR]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "metric_oracle.hpp"
#include "oracles.hpp"
#include "tfuse/checkpoint.hpp"
#include "tfuse/config.hpp"
#include "tfuse/dataset.hpp"
#include "tfuse/ffm.hpp"
#include "tfuse/grad_suite.hpp"
#include "tfuse/inference.hpp"
#include "tfuse/losses.hpp"
#include "tfuse/mask_analysis.hpp"
#include "tfuse/tft_io.hpp"
#include "tfuse/train.hpp"

using namespace tfuse;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto cases = run_grad_suite("all");
  const double secs = seconds_since(t0);
  std::map<std::string, std::size_t> per_suite;
  std::size_t failed = 0, few_probes = 0;
  std::string first_failure;
  for (const auto& c : cases) {
    ++per_suite[c.suite];
    if (c.report.probes < 10) ++few_probes;
    if (!c.report.pass) {
      ++failed;
      if (first_failure.empty()) first_failure = c.suite + "/" + c.name + " " + c.shape + ": " + c.report.diagnostic;
    }
  }
  bool enough = per_suite.size() == grad_suite_names().size();
  for (const auto& [suite, n] : per_suite) enough = enough && n >= 5;
  Outcome o;
  o.pass = failed == 0 && few_probes == 0 && enough && secs < 120.0;
  o.detail = fmt("%zu cases, %zu failed, %zu with <10 probes, %.1fs", cases.size(), failed, few_probes, secs);
  if (!first_failure.empty()) o.detail += "; first failure " + first_failure;
  return o;
}

Outcome loss_fixtures() {
  bool ok = true;
  Rng rng(17);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> g(3 * 36);
    for (auto& v : g) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
    const Tensor gt = Tensor::from({3, 6, 6}, g);
    ok = ok && dice_loss(gt, gt).item() == 0.0;
  }
  const double bce = bce_loss(Tensor::full({1, 1, 1}, 1.0), Tensor::full({1, 1, 1}, 0.5)).item();
  const double neg = neg_corr_loss(Tensor::full({2, 4}, std::exp(-1.0))).item();
  const Tensor ones = Tensor::full({1, 2, 2}, 1.0), half = Tensor::full({1, 2, 2}, 0.5);
  const Tensor s = Tensor::from({1, 2}, {0.5, 0.25});
  const double cm = corr_max_loss(ones, half, s, 0.1).item();
  const double cm_ref = std::log(2.0) + 2.0 / 7.0 + 0.1 * (std::log(2.0) + std::log(4.0)) / 2.0;
  const double e_bce = std::abs(bce - std::log(2.0)), e_neg = std::abs(neg - 1.0), e_cm = std::abs(cm - cm_ref);
  ok = ok && e_bce <= 1e-12 && e_neg <= 1e-12 && e_cm <= 1e-12;
  return {ok, fmt("|bce-ln2|=%.1e |neg_corr-1|=%.1e |corr_max-ref|=%.1e, dice(gt,gt)=0 on 20 masks", e_bce, e_neg, e_cm)};
}

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0.0;
  std::size_t checked = 0;
  bool identity = true;
  while (checked < 50) {
    const auto f = oracle::random_fixture(rng);
    if (f.n_gt() == 0) continue;
    ++checked;
    const auto ms = match_detections(f.dets, f.gts, 0.5);
    const double mr = mr_fppi_curve(ms.matches, f.dets.size(), f.n_gt()).mr;
    worst = std::max(worst, std::abs(mr - oracle::log_average_miss_rate(f)));
    const auto ap = average_precision(f.dets, f.gts);
    const auto th = coco_iou_thresholds();
    double mean = 0.0;
    for (std::size_t i = 0; i < th.size(); ++i) {
      const double ref = oracle::average_precision(f, th[i]);
      worst = std::max(worst, std::abs(ap.per_threshold[i] - ref));
      mean += ref / static_cast<double>(th.size());
    }
    worst = std::max(worst, std::abs(ap.ap - mean));
    for (auto mode : {FpRankMode::by_score, FpRankMode::by_iou}) {
      identity = identity && fp_ablation(ms, mode, {0.0}).front().mr == mr;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && identity && secs < 60.0,
          fmt("50 fixtures, max |lib-oracle|=%.1e, fraction-0 identity %s, %.2fs", worst, identity ? "holds" : "broken", secs)};
}

Outcome rasterization() {
  Rng rng(99);
  std::size_t mismatches = 0, non_binary = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<GroundTruthBox> boxes(static_cast<std::size_t>(rng.uniform_int(0, 8)));
    for (auto& b : boxes) {
      const double x = rng.uniform(-10, 70), y = rng.uniform(-10, 70);
      b.box = {x, y, x + rng.uniform(0, 30), y + rng.uniform(0, 40)};
    }
    const auto m = rasterize_boxes(boxes, 64, 64);
    std::size_t brute = 0;
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        bool in = false;
        for (const auto& b : boxes) {
          in = in || (b.box.x1 <= double(x) && double(x) < b.box.x2 && b.box.y1 <= double(y) && double(y) < b.box.y2);
        }
        brute += in;
      }
    mismatches += static_cast<std::size_t>(m.sum()) != brute;
    for (std::size_t f : {1, 2, 4, 8}) non_binary += !downsample_mask_nearest(m, f).is_binary();
  }
  return {mismatches == 0 && non_binary == 0,
          fmt("100 box sets, %zu count mismatches, %zu non-binary downsamples", mismatches, non_binary)};
}

Outcome zero_offsets() {
  Rng rng(5);
  double worst = 0.0;
  for (std::size_t c : {4, 8, 16}) {
    const std::size_t b = 2, h = 8, w = 8;
    const FeaturePair pair{oracle::random_tensor({b, c, h, w}, rng), oracle::random_tensor({b, c, h, w}, rng)};
    FfmOptions opt;
    opt.channels = c;
    const auto params = FfmParams::init(opt, rng);
    const Tensor step1 = deformable_fuse(pair, params);  // offsets predicted by the zero-initialized branch
    std::vector<double> riffled;
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (const Tensor* t : {&pair.rgb, &pair.thermal}) {
          const auto plane = t->data().subspan((n * c + ch) * h * w, h * w);
          riffled.insert(riffled.end(), plane.begin(), plane.end());
        }
    std::size_t oh = 0, ow = 0;
    const auto ref = oracle::conv(riffled, b, 2 * c, h, w,
                                  std::vector<double>(params.gw_kernel.data().begin(), params.gw_kernel.data().end()), c, 3,
                                  std::vector<double>(params.gw_bias.data().begin(), params.gw_bias.data().end()), 1, 1, c,
                                  oh, ow);
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(step1.data()[i] - ref[i]));
  }
  return {worst <= 1e-12, fmt("c in {4,8,16}, max |deformable - grouped conv oracle| = %.1e", worst)};
}

struct RunResult {
  double mr = 1.0;
  std::size_t fp = 0;
  double seconds = 0.0;
  bool loss_fell = false;
};

struct TrendState {
  std::optional<Checkpoint> full_model;
  std::vector<DatasetSample> val;
};

Outcome trend(TrendState& keep) {
  const ExperimentConfig defaults;
  const std::size_t n_seeds = 5;
  const AblationRow rows[] = {AblationRow::ffm, AblationRow::ffm_frm, AblationRow::ffm_frm_seg,
                              AblationRow::ffm_frm_seg_neg};
  std::vector<std::vector<RunResult>> res(4, std::vector<RunResult>(n_seeds));
  for (std::size_t s = 0; s < n_seeds; ++s) {
    ExperimentConfig base = defaults;
    base.seed = s + 1;
    base.data_seed = s + 1;
    const auto train_set = generate_dataset(base.data_seed, base.n_train, Split::train, DatasetOptions::from_config(base));
    const auto val_set = generate_dataset(base.data_seed, base.n_val, Split::val, DatasetOptions::from_config(base));
    for (std::size_t r = 0; r < 4; ++r) {
      const auto cfg = apply_ablation(base, rows[r]);
      const auto t0 = Clock::now();
      const auto tr = train(cfg, train_set);
      const Checkpoint ck{cfg, tr.params};
      const auto ev = evaluate_model(ck, val_set);
      auto& out = res[r][s];
      out.seconds = seconds_since(t0);
      out.mr = ev.report.mr;
      out.fp = ev.report.fp_count;
      const std::size_t n = tr.history.size(), k = std::max<std::size_t>(n / 10, 1);
      double first = 0, last = 0;
      for (std::size_t i = 0; i < k; ++i) {
        first += tr.history[i].total;
        last += tr.history[n - 1 - i].total;
      }
      out.loss_fell = last < first;
      std::printf("  seed %zu %-16s MR %.4f  FP(>=0.3) %4zu  %.0fs\n", s + 1, to_string(rows[r]).c_str(), out.mr, out.fp,
                  out.seconds);
      std::fflush(stdout);
      if (s == 0 && rows[r] == AblationRow::ffm_frm_seg_neg) {
        keep.full_model = ck;
        keep.val = val_set;
      }
    }
  }
  std::size_t mr_wins = 0, fp_wins = 0, loss_fell = 0;
  double mean[4] = {0, 0, 0, 0}, worst_budget = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    double total_secs = 0.0;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      mean[r] += res[r][s].mr / static_cast<double>(n_seeds);
      total_secs += res[r][s].seconds;
    }
    worst_budget = std::max(worst_budget, total_secs);
  }
  for (std::size_t s = 0; s < n_seeds; ++s) {
    mr_wins += res[3][s].mr < res[0][s].mr;
    fp_wins += res[3][s].fp < res[0][s].fp;
    loss_fell += res[3][s].loss_fell;
  }
  const bool monotone = mean[1] <= mean[0] && mean[2] <= mean[1] && mean[3] <= mean[2];
  Outcome o;
  o.pass = mr_wins >= 4 && fp_wins >= 4 && monotone && worst_budget < 30.0 * 60.0;
  o.detail = fmt("full beats baseline on MR %zu/5, on FP %zu/5; mean MR %.4f %.4f %.4f %.4f (%s); "
                 "slowest config %.0fs; full-model loss fell on %zu/5 seeds",
                 mr_wins, fp_wins, mean[0], mean[1], mean[2], mean[3], monotone ? "monotone" : "not monotone",
                 worst_budget, loss_fell);
  return o;
}

Outcome anr_air_check(TrendState& keep) {
  const auto fixture = anr_air({RelationMatrix{2, {2, 1, 1, 2}}});
  const bool fixture_ok = fixture.anr == 2.0 && fixture.air == 2.0;
  if (!keep.full_model) {
    ExperimentConfig cfg;
    const auto train_set = generate_dataset(cfg.data_seed, cfg.n_train, Split::train, DatasetOptions::from_config(cfg));
    keep.val = generate_dataset(cfg.data_seed, cfg.n_val, Split::val, DatasetOptions::from_config(cfg));
    keep.full_model = Checkpoint{cfg, train(cfg, train_set).params};
  }
  const auto fa = analyze_features(*keep.full_model, keep.val);
  const bool trained_ok = fa.ratios.n_used > 0 && fa.ratios.anr > 1.0 && fa.ratios.air > 1.0;
  return {fixture_ok && trained_ok, fmt("c=2 fixture ANR %.17g AIR %.17g; trained features ANR %.4f AIR %.4f (%zu used, %zu excluded)",
                                        fixture.anr, fixture.air, fa.ratios.anr, fa.ratios.air, fa.ratios.n_used,
                                        fa.ratios.n_excluded)};
}

int run(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

std::optional<std::string> first_difference(const fs::path& a, const fs::path& b) {
  std::set<fs::path> files;
  for (const auto* root : {&a, &b})
    for (const auto& e : fs::recursive_directory_iterator(*root))
      if (e.is_regular_file()) files.insert(fs::relative(e.path(), *root));
  for (const auto& f : files) {
    if (!fs::exists(a / f) || !fs::exists(b / f) || read_text(a / f) != read_text(b / f)) return f.string();
  }
  return std::nullopt;
}

Outcome determinism(const std::string& cli, const fs::path& work) {
  fs::remove_all(work);
  fs::create_directories(work);
  ExperimentConfig cfg;
  cfg.n_train = 160;
  cfg.n_val = 40;
  cfg.epochs = 2;
  cfg.seed = 3;
  write_text_atomic(work / "config.txt", cfg.to_text());
  const std::string q = "\"" + cli + "\"";
  int rc = run(q + " generate-data --seed 3 --n 40 --split val --out " + (work / "val").string());
  for (const char* name : {"a", "b"}) {
    const auto dir = work / name;
    rc |= run(q + " train --quiet --config " + (work / "config.txt").string() + " --out " + (dir / "ckpt").string());
    rc |= run(q + " eval --checkpoint " + (dir / "ckpt").string() + " --data " + (work / "val").string() + " --report " +
              (dir / "report.csv").string());
  }
  if (rc != 0) return {false, "CLI invocation failed (" + cli + ")"};
  const auto diff = first_difference(work / "a", work / "b");
  std::size_t n_files = 0;
  for (const auto& e : fs::recursive_directory_iterator(work / "a")) n_files += e.is_regular_file();
  const bool has_log = fs::exists(work / "a" / "ckpt" / "loss_log.csv");
  return {!diff && has_log && n_files > 3,
          diff ? "files differ: " + *diff
               : fmt("two train+eval runs, %zu files byte-identical (checkpoint, loss log, reports)", n_files)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tfuse acceptance suite"};
  std::vector<int> only;
  std::string cli = TFUSE_CLI_PATH;
  std::string work = (fs::temp_directory_path() / "tfuse_acceptance").string();
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  app.add_option("--cli", cli, "Path of the tfuse executable");
  app.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);

  TrendState state;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"analytic loss fixtures", loss_fixtures},
      {"metric oracle equivalence", metric_oracles},
      {"rasterization oracle", rasterization},
      {"zero-offset equivalence", zero_offsets},
      {"ablation trend", [&] { return trend(state); }},
      {"ANR/AIR analyzer", [&] { return anr_air_check(state); }},
      {"determinism", [&] { return determinism(cli, work); }},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("criterion %d (%s): %s | %s\n", id, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
