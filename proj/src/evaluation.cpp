#include "tfuse/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tfuse/mask_analysis.hpp"

namespace tfuse {

std::array<double, MissRateProtocol::n_reference_points> MissRateProtocol::reference_fppi() {
  std::array<double, n_reference_points> refs{};
  for (std::size_t i = 0; i < n_reference_points; ++i) {
    refs[i] = std::pow(10.0, -2.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n_reference_points - 1));
  }
  return refs;
}

std::size_t MatchSet::true_positives() const {
  return static_cast<std::size_t>(
      std::count_if(matches.begin(), matches.end(), [](const MatchResult& m) { return m.status == MatchStatus::tp; }));
}

std::size_t MatchSet::false_positives() const { return matches.size() - true_positives(); }

std::size_t MatchSet::total_false_negatives() const {
  return std::accumulate(false_negatives.begin(), false_negatives.end(), std::size_t{0});
}

MatchSet match_detections(const DetectionsPerImage& detections, const GroundTruthPerImage& ground_truth,
                          double iou_threshold) {
  MatchSet out;
  out.n_images = std::max(detections.size(), ground_truth.size());
  out.false_negatives.assign(out.n_images, 0);
  static const std::vector<Detection> no_dets;
  static const std::vector<GroundTruthBox> no_gts;
  for (std::size_t img = 0; img < out.n_images; ++img) {
    const auto& dets = img < detections.size() ? detections[img] : no_dets;
    const auto& gts = img < ground_truth.size() ? ground_truth[img] : no_gts;
    out.n_gt += gts.size();

    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

    std::vector<bool> claimed(gts.size(), false);
    for (std::size_t d : order) {
      MatchResult m;
      m.image_id = img;
      m.detection_index = d;
      m.score = dets[d].score;
      double best = -1.0;
      std::size_t best_gt = 0;
      double max_any = 0.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        const double v = iou(dets[d].box, gts[g].box);
        max_any = std::max(max_any, v);
        if (!claimed[g] && v >= iou_threshold && v > best) {
          best = v;
          best_gt = g;
        }
      }
      if (best >= 0.0) {
        claimed[best_gt] = true;
        m.status = MatchStatus::tp;
        m.matched_gt = best_gt;
        m.iou = best;
      } else {
        m.status = MatchStatus::fp;
        m.iou = max_any;
      }
      out.matches.push_back(m);
    }
    out.false_negatives[img] = static_cast<std::size_t>(std::count(claimed.begin(), claimed.end(), false));
  }
  return out;
}

namespace {

// Indices of `matches` sorted by descending score; ties keep input order.
std::vector<std::size_t> score_order(const std::vector<MatchResult>& matches) {
  std::vector<std::size_t> order(matches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return matches[a].score > matches[b].score; });
  return order;
}

}  // namespace

MissRateCurve mr_fppi_curve(const std::vector<MatchResult>& matches, std::size_t n_images, std::size_t n_gt) {
  if (n_gt == 0) throw std::invalid_argument("mr_fppi_curve: no ground truth, miss rate undefined");
  if (n_images == 0) throw std::invalid_argument("mr_fppi_curve: n_images must be >= 1");
  const auto order = score_order(matches);

  // Operating points after admitting each distinct score; the first point
  // is the empty detector (threshold above every score).
  std::vector<FppiPoint> sweep{{0.0, 1.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& m = matches[order[i]];
    (m.status == MatchStatus::tp ? tp : fp) += 1;
    const bool last_of_tie = i + 1 == order.size() || matches[order[i + 1]].score != m.score;
    if (last_of_tie) {
      sweep.push_back({static_cast<double>(fp) / static_cast<double>(n_images),
                       1.0 - static_cast<double>(tp) / static_cast<double>(n_gt)});
    }
  }

  MissRateCurve curve;
  const auto refs = MissRateProtocol::reference_fppi();
  double log_sum = 0.0;
  for (std::size_t r = 0; r < refs.size(); ++r) {
    // fppi is non-decreasing along the sweep; keep the last admissible point.
    double miss = 1.0;
    for (const auto& p : sweep) {
      if (p.fppi <= refs[r]) miss = p.miss_rate;
      else break;
    }
    curve.points[r] = {refs[r], miss};
    log_sum += std::log(std::max(miss, MissRateProtocol::miss_rate_floor));
  }
  curve.mr = std::exp(log_sum / static_cast<double>(refs.size()));
  return curve;
}

double average_precision_at(const std::vector<MatchResult>& matches, std::size_t n_gt) {
  if (n_gt == 0) throw std::invalid_argument("average_precision: no ground truth");
  const auto order = score_order(matches);
  const std::size_t n = order.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (matches[order[i]].status == MatchStatus::tp) ++tp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double acc = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = static_cast<double>(k) * 0.01;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) acc += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return acc / 101.0;
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t(10);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.5 + 0.05 * static_cast<double>(i);
  return t;
}

ApResult average_precision(const DetectionsPerImage& detections, const GroundTruthPerImage& ground_truth,
                           const std::vector<double>& iou_thresholds) {
  ApResult out;
  out.per_threshold.assign(iou_thresholds.size(), 0.0);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(iou_thresholds.size());
  std::size_t n_gt = 0;
  for (const auto& g : ground_truth) n_gt += g.size();
  if (n_gt == 0) throw std::invalid_argument("average_precision: no ground truth");
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto ms = match_detections(detections, ground_truth, iou_thresholds[static_cast<std::size_t>(i)]);
    out.per_threshold[static_cast<std::size_t>(i)] = average_precision_at(ms.matches, ms.n_gt);
  }
  for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
    if (std::abs(iou_thresholds[i] - 0.5) < 1e-9) out.ap50 = out.per_threshold[i];
    if (std::abs(iou_thresholds[i] - 0.75) < 1e-9) out.ap75 = out.per_threshold[i];
  }
  if (!out.per_threshold.empty()) {
    out.ap = std::accumulate(out.per_threshold.begin(), out.per_threshold.end(), 0.0) /
             static_cast<double>(out.per_threshold.size());
  }
  return out;
}

std::string to_string(FpRankMode mode) { return mode == FpRankMode::by_score ? "by_score" : "by_iou"; }

FpRankMode fp_rank_mode_from_string(const std::string& s) {
  if (s == "by_score" || s == "score") return FpRankMode::by_score;
  if (s == "by_iou" || s == "iou") return FpRankMode::by_iou;
  throw std::invalid_argument("unknown FP ranking mode: " + s);
}

std::vector<AblationPoint> fp_ablation(const MatchSet& match_set, FpRankMode mode,
                                       const std::vector<double>& fractions) {
  std::vector<std::size_t> fps;
  for (std::size_t i = 0; i < match_set.matches.size(); ++i) {
    if (match_set.matches[i].status == MatchStatus::fp) fps.push_back(i);
  }
  const auto& ms = match_set.matches;
  std::stable_sort(fps.begin(), fps.end(), [&](std::size_t a, std::size_t b) {
    return mode == FpRankMode::by_score ? ms[a].score > ms[b].score : ms[a].iou > ms[b].iou;
  });

  std::vector<AblationPoint> curve;
  curve.reserve(fractions.size());
  for (double f : fractions) {
    if (f < 0.0 || f > 1.0) throw std::invalid_argument("fp_ablation: fraction outside [0,1]");
    const auto removed = std::min(fps.size(), static_cast<std::size_t>(std::floor(f * static_cast<double>(fps.size()) + 1e-9)));
    std::vector<bool> drop(ms.size(), false);
    for (std::size_t i = 0; i < removed; ++i) drop[fps[i]] = true;
    std::vector<MatchResult> kept;
    kept.reserve(ms.size() - removed);
    for (std::size_t i = 0; i < ms.size(); ++i) {
      if (!drop[i]) kept.push_back(ms[i]);
    }
    curve.push_back({f, removed, mr_fppi_curve(kept, match_set.n_images, match_set.n_gt).mr});
  }
  return curve;
}

MetricReport evaluate_detections(const DetectionsPerImage& detections, const GroundTruthPerImage& ground_truth) {
  MetricReport report;
  const auto ms = match_detections(detections, ground_truth, 0.5);
  report.n_images = ms.n_images;
  report.n_gt = ms.n_gt;
  report.n_detections = ms.matches.size();
  const auto curve = mr_fppi_curve(ms.matches, ms.n_images, ms.n_gt);
  report.mr = curve.mr;
  report.fppi_points = curve.points;
  const auto ap = average_precision(detections, ground_truth);
  report.ap50 = ap.ap50;
  report.ap75 = ap.ap75;
  report.ap = ap.ap;
  report.fp_count = count_false_positives(ms.matches, MissRateProtocol::fp_report_score);
  return report;
}

namespace {

std::vector<std::vector<std::string>> read_records(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::vector<std::string> fields;
    for (std::string f; ls >> f;) fields.push_back(f);
    if (!fields.empty()) rows.push_back(std::move(fields));
  }
  return rows;
}

Box parse_box(const std::vector<std::string>& f, const std::filesystem::path& path) {
  Box b{std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4])};
  if (!b.valid()) throw std::runtime_error(path.string() + ": degenerate box for image " + f[0]);
  return b;
}

}  // namespace

DetectionsPerImage read_detections(const std::filesystem::path& path, std::size_t n_images) {
  DetectionsPerImage out(n_images);
  for (const auto& f : read_records(path)) {
    if (f.size() != 6) throw std::runtime_error(path.string() + ": detection records need 6 fields");
    const auto id = static_cast<std::size_t>(std::stoull(f[0]));
    if (id >= out.size()) out.resize(id + 1);
    out[id].push_back({parse_box(f, path), std::stod(f[5]), id});
  }
  return out;
}

GroundTruthPerImage read_ground_truth(const std::filesystem::path& path, std::size_t n_images) {
  GroundTruthPerImage out(n_images);
  for (const auto& f : read_records(path)) {
    if (f.size() != 5 && f.size() != 6) throw std::runtime_error(path.string() + ": GT records need 5 or 6 fields");
    const auto id = static_cast<std::size_t>(std::stoull(f[0]));
    if (id >= out.size()) out.resize(id + 1);
    out[id].push_back({parse_box(f, path), f.size() == 6 ? occlusion_from_string(f[5]) : Occlusion::none});
  }
  return out;
}

std::string format_detections(const DetectionsPerImage& detections) {
  std::ostringstream os;
  os << std::setprecision(9);
  for (std::size_t img = 0; img < detections.size(); ++img) {
    for (const auto& d : detections[img]) {
      os << img << ',' << d.box.x1 << ',' << d.box.y1 << ',' << d.box.x2 << ',' << d.box.y2 << ',' << d.score << '\n';
    }
  }
  return os.str();
}

std::string format_ground_truth(const GroundTruthPerImage& ground_truth) {
  std::ostringstream os;
  os << std::setprecision(9);
  for (std::size_t img = 0; img < ground_truth.size(); ++img) {
    for (const auto& g : ground_truth[img]) {
      os << img << ',' << g.box.x1 << ',' << g.box.y1 << ',' << g.box.x2 << ',' << g.box.y2 << ','
         << to_string(g.occlusion) << '\n';
    }
  }
  return os.str();
}

std::string metric_report_csv(const MetricReport& r, const std::string& config_hash) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "key,value\n";
  os << "config_hash," << config_hash << '\n';
  os << "mr," << r.mr << '\n';
  os << "ap50," << r.ap50 << '\n';
  os << "ap75," << r.ap75 << '\n';
  os << "ap," << r.ap << '\n';
  os << "fp_count_score_ge_0.3," << r.fp_count << '\n';
  os << "n_images," << r.n_images << '\n';
  os << "n_gt," << r.n_gt << '\n';
  os << "n_detections," << r.n_detections << '\n';
  for (const auto& p : r.fppi_points) os << "miss_rate_at_fppi_" << p.fppi << ',' << p.miss_rate << '\n';
  return os.str();
}

std::string fp_ablation_csv(const std::vector<std::pair<FpRankMode, std::vector<AblationPoint>>>& curves) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "mode,fraction,mr\n";
  for (const auto& [mode, points] : curves) {
    for (const auto& p : points) os << to_string(mode) << ',' << p.fraction << ',' << p.mr << '\n';
  }
  return os.str();
}

}  // namespace tfuse
