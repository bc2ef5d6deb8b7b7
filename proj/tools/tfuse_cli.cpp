#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tfuse/checkpoint.hpp"
#include "tfuse/config.hpp"
#include "tfuse/dataset.hpp"
#include "tfuse/evaluation.hpp"
#include "tfuse/grad_suite.hpp"
#include "tfuse/inference.hpp"
#include "tfuse/mask_analysis.hpp"
#include "tfuse/tft_io.hpp"
#include "tfuse/train.hpp"

namespace fs = std::filesystem;
using namespace tfuse;

namespace {

int generate_data(std::uint64_t seed, std::size_t n, const std::string& split, const fs::path& out,
                  const std::string& config_path) {
  DatasetOptions opt;
  if (!config_path.empty()) opt = DatasetOptions::from_config(ExperimentConfig::load(config_path));
  const auto samples = generate_dataset(seed, n, split_from_string(split), opt);
  save_dataset(out, samples);
  std::size_t boxes = 0;
  for (const auto& s : samples) boxes += s.boxes.size();
  std::cout << "wrote " << n << " " << split << " images (" << boxes << " pedestrians) to " << out << '\n';
  return 0;
}

int train_cmd(const fs::path& config_path, const fs::path& out, const std::string& data_dir, bool quiet) {
  const auto cfg = ExperimentConfig::load(config_path);
  const auto data = data_dir.empty()
                        ? generate_dataset(cfg.data_seed, cfg.n_train, Split::train, DatasetOptions::from_config(cfg))
                        : load_dataset(data_dir);
  StepCallback progress;
  if (!quiet) {
    progress = [](std::size_t step, std::size_t total, const LossBreakdown& b) {
      if (step % 50 == 0 || step + 1 == total) {
        std::fprintf(stderr, "step %zu/%zu total %.5f det_cls %.5f det_reg %.5f corr_max %.5f\n", step + 1, total,
                     b.total, b.det_cls, b.det_reg, b.corr_max);
      }
    };
  }
  try {
    const auto result = train(cfg, data, progress);
    save_checkpoint(out, cfg, result.params);
    write_text_atomic(out / "loss_log.csv", result.loss_csv);
  } catch (const TrainingDiverged& e) {
    std::cerr << e.what() << '\n';
    return 3;
  }
  std::cout << "checkpoint " << out << " config_hash " << cfg.hash() << '\n';
  return 0;
}

int eval_cmd(const fs::path& checkpoint, const fs::path& data_dir, const fs::path& report, std::string detections) {
  const auto ck = load_checkpoint(checkpoint);
  const auto samples = load_dataset(data_dir);
  const auto ev = evaluate_model(ck, samples);
  const auto hash = ck.config.hash();
  write_text_atomic(report, metric_report_csv(ev.report, hash));
  if (detections.empty()) detections = fs::path(report).replace_extension(".detections.jsonl").string();
  write_text_atomic(detections, detections_jsonl(ev.detections, samples, hash));
  // Plain records for ablate-fp.
  write_text_atomic(fs::path(report).replace_extension(".detections.txt"), format_detections(ev.detections));
  std::printf("MR %.4f  AP50 %.4f  AP %.4f  FP(score>=0.3) %zu  images %zu  gt %zu\n", ev.report.mr, ev.report.ap50,
              ev.report.ap, ev.report.fp_count, ev.report.n_images, ev.report.n_gt);
  return 0;
}

int analyze_cmd(const fs::path& checkpoint, const fs::path& data_dir, const std::string& out_dir, bool normalize,
                const std::string& dump_offsets) {
  const auto ck = load_checkpoint(checkpoint);
  const auto samples = load_dataset(data_dir);
  const auto fa = analyze_features(ck, samples, normalize);
  std::ostringstream csv;
  csv << "# config_hash " << ck.config.hash() << '\n'
      << anr_air_csv_header() << anr_air_csv_row(data_dir.filename().string(), ck.config.channels, fa.ratios);
  std::cout << csv.str();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text_atomic(fs::path(out_dir) / "anr_air.csv", csv.str());
    const std::size_t c = ck.config.channels;
    std::vector<double> mean(c * c, 0.0);
    for (const auto& m : fa.matrices) {
      for (std::size_t i = 0; i < c * c; ++i) mean[i] += m.entries[i] / static_cast<double>(fa.matrices.size());
    }
    write_tft(fs::path(out_dir) / "relation_matrix_mean.tft", Tensor::from({c, c}, mean));
  }
  if (!dump_offsets.empty()) {
    fs::create_directories(dump_offsets);
    const auto offsets = predict_sample_offsets(ck, samples);
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      write_tft(fs::path(dump_offsets) / (std::to_string(i) + ".tft"), offsets[i]);
    }
    std::cout << "dumped " << offsets.size() << " offset maps to " << dump_offsets << '\n';
  }
  return 0;
}

int ablate_cmd(const fs::path& dets, const fs::path& gt_path, const std::string& mode, std::vector<double> fractions,
               const std::string& out) {
  const auto gt = read_ground_truth(gt_path);
  const auto detections = read_detections(dets, gt.size());
  const auto matches = match_detections(detections, gt);
  std::vector<std::pair<FpRankMode, std::vector<AblationPoint>>> curves;
  std::vector<FpRankMode> modes;
  if (mode == "both") {
    modes = {FpRankMode::by_score, FpRankMode::by_iou};
  } else {
    modes = {fp_rank_mode_from_string(mode)};
  }
  for (auto m : modes) curves.emplace_back(m, fp_ablation(matches, m, fractions));
  const auto csv = fp_ablation_csv(curves);
  if (!out.empty()) write_text_atomic(out, csv);
  std::cout << csv;
  return 0;
}

int grad_check_cmd(const std::string& suite, std::uint64_t seed) {
  const auto cases = run_grad_suite(suite, seed);
  std::size_t failed = 0;
  for (const auto& c : cases) {
    std::printf("%-4s %-7s %-28s %-36s max_rel %.3e\n", c.report.pass ? "ok" : "FAIL", c.suite.c_str(), c.name.c_str(),
                c.shape.c_str(), c.report.max_rel_err);
    if (!c.report.pass) {
      ++failed;
      std::printf("     %s\n", c.report.diagnostic.c_str());
    }
  }
  std::printf("%zu/%zu cases passed\n", cases.size() - failed, cases.size());
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tfuse: RGB-thermal feature fusion detector toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate-data", "Generate a synthetic RGB-thermal dataset");
  std::uint64_t gen_seed = 1;
  std::size_t gen_n = 0;
  std::string gen_out, gen_split = "train", gen_config;
  gen->add_option("--seed", gen_seed, "Dataset seed")->required();
  gen->add_option("--n", gen_n, "Number of images")->required()->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--split", gen_split, "train or val")->check(CLI::IsMember({"train", "val"}));
  gen->add_option("--config", gen_config, "Take scene options from this config");

  auto* tr = app.add_subcommand("train", "Train a detector");
  std::string tr_config, tr_out, tr_data;
  bool tr_quiet = false;
  tr->add_option("--config", tr_config, "Config file (key = value)")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "Checkpoint directory")->required();
  tr->add_option("--data", tr_data, "Training set directory (default: generate from the config)");
  tr->add_flag("--quiet", tr_quiet, "No progress output");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_ck, ev_data, ev_report, ev_dets;
  ev->add_option("--checkpoint", ev_ck, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--data", ev_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--report", ev_report, "Metric report CSV path")->required();
  ev->add_option("--detections", ev_dets, "Detections JSON-lines path (default: next to the report)");

  auto* an = app.add_subcommand("analyze", "Relation matrices and ANR/AIR of backbone features");
  std::string an_ck, an_data, an_out, an_offsets;
  bool an_norm = false;
  an->add_option("--checkpoint", an_ck, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  an->add_option("--data", an_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  an->add_option("--out", an_out, "Directory for anr_air.csv and the mean relation matrix");
  an->add_flag("--normalize", an_norm, "L2-normalize channel maps before the inner products");
  an->add_option("--dump-offsets", an_offsets, "Directory for per-image offset maps (TFT1)");

  auto* ab = app.add_subcommand("ablate-fp", "Miss rate after removing false positives");
  std::string ab_dets, ab_gt, ab_mode = "both", ab_out;
  std::vector<double> ab_fractions{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  ab->add_option("--detections", ab_dets, "Detections file (image_id x1 y1 x2 y2 score)")->required()->check(CLI::ExistingFile);
  ab->add_option("--gt", ab_gt, "Ground truth file (image_id x1 y1 x2 y2 [occlusion])")->required()->check(CLI::ExistingFile);
  ab->add_option("--mode", ab_mode, "score, iou or both")->check(CLI::IsMember({"score", "iou", "both"}));
  ab->add_option("--fractions", ab_fractions, "Fractions of false positives to remove")->delimiter(',');
  ab->add_option("--out", ab_out, "CSV output path");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  std::string gc_suite = "all";
  std::uint64_t gc_seed = 7;
  gc->add_option("--suite", gc_suite, "ops, ffm, frm, losses, full or all");
  gc->add_option("--seed", gc_seed, "Seed for shapes and probes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return generate_data(gen_seed, gen_n, gen_split, gen_out, gen_config);
    if (*tr) return train_cmd(tr_config, tr_out, tr_data, tr_quiet);
    if (*ev) return eval_cmd(ev_ck, ev_data, ev_report, ev_dets);
    if (*an) return analyze_cmd(an_ck, an_data, an_out, an_norm, an_offsets);
    if (*ab) return ablate_cmd(ab_dets, ab_gt, ab_mode, ab_fractions, ab_out);
    if (*gc) return grad_check_cmd(gc_suite, gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
