#pragma once

// Brute-force metric references: every threshold is evaluated by matching
// from scratch, and precision envelopes are taken by exhaustive maxima.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "tfuse/boxes.hpp"
#include "tfuse/rng.hpp"

namespace oracle {

struct Fixture {
  std::vector<std::vector<tfuse::Detection>> dets;
  std::vector<std::vector<tfuse::GroundTruthBox>> gts;
  std::size_t n_gt() const {
    std::size_t n = 0;
    for (const auto& g : gts) n += g.size();
    return n;
  }
};

inline double box_iou(const tfuse::Box& a, const tfuse::Box& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Up to 10 images with up to 8 GT boxes and 8 detections each; detections
/// are a mix of jittered copies of GT boxes and free boxes, scores distinct.
inline Fixture random_fixture(tfuse::Rng& rng) {
  Fixture f;
  const auto n_img = static_cast<std::size_t>(rng.uniform_int(1, 10));
  f.dets.resize(n_img);
  f.gts.resize(n_img);
  auto rand_box = [&] {
    const double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
    return tfuse::Box{x, y, x + rng.uniform(5, 30), y + rng.uniform(5, 30)};
  };
  for (std::size_t i = 0; i < n_img; ++i) {
    const auto ng = rng.uniform_int(0, 8), nd = rng.uniform_int(0, 8);
    for (std::int64_t g = 0; g < ng; ++g) f.gts[i].push_back({rand_box(), tfuse::Occlusion::none});
    for (std::int64_t d = 0; d < nd; ++d) {
      tfuse::Box b = rand_box();
      if (!f.gts[i].empty() && rng.bernoulli(0.7)) {
        const auto& g = f.gts[i][static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(f.gts[i].size()) - 1))].box;
        const double jx = rng.uniform(-4, 4), jy = rng.uniform(-4, 4);
        b = {g.x1 + jx, g.y1 + jy, g.x2 + jx + rng.uniform(-3, 3), g.y2 + jy + rng.uniform(-3, 3)};
      }
      f.dets[i].push_back({b, rng.uniform(0.01, 1.0), i});
    }
  }
  return f;
}

struct Counts {
  std::size_t tp = 0, fp = 0;
};

/// Greedy matching of the detections with score >= threshold.
inline Counts match_at(const Fixture& f, double score_threshold, double iou_thr) {
  Counts c;
  for (std::size_t i = 0; i < f.dets.size(); ++i) {
    std::vector<std::size_t> idx;
    for (std::size_t d = 0; d < f.dets[i].size(); ++d) {
      if (f.dets[i][d].score >= score_threshold) idx.push_back(d);
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return f.dets[i][a].score > f.dets[i][b].score; });
    std::vector<bool> taken(f.gts[i].size(), false);
    for (std::size_t d : idx) {
      double best = -1.0;
      std::size_t best_g = 0;
      for (std::size_t g = 0; g < f.gts[i].size(); ++g) {
        if (taken[g]) continue;
        const double v = box_iou(f.dets[i][d].box, f.gts[i][g].box);
        if (v >= iou_thr && v > best) {
          best = v;
          best_g = g;
        }
      }
      if (best >= 0.0) {
        taken[best_g] = true;
        ++c.tp;
      } else {
        ++c.fp;
      }
    }
  }
  return c;
}

inline double log_average_miss_rate(const Fixture& f) {
  const double n_gt = static_cast<double>(f.n_gt());
  const double n_img = static_cast<double>(f.dets.size());
  std::vector<double> thresholds{INFINITY};
  for (const auto& ds : f.dets)
    for (const auto& d : ds) thresholds.push_back(d.score);
  double log_sum = 0.0;
  for (int r = 0; r < 9; ++r) {
    const double ref = std::pow(10.0, -2.0 + r * 0.25);
    double best_t = INFINITY, mr = 1.0;
    for (double t : thresholds) {
      const Counts c = match_at(f, t, 0.5);
      if (static_cast<double>(c.fp) / n_img <= ref && t <= best_t) {
        best_t = t;
        mr = 1.0 - static_cast<double>(c.tp) / n_gt;
      }
    }
    log_sum += std::log(std::max(mr, 1e-5));
  }
  return std::exp(log_sum / 9.0);
}

inline double average_precision(const Fixture& f, double iou_thr) {
  const double n_gt = static_cast<double>(f.n_gt());
  std::vector<double> scores;
  for (const auto& ds : f.dets)
    for (const auto& d : ds) scores.push_back(d.score);
  std::sort(scores.begin(), scores.end(), std::greater<>());
  std::vector<double> rec, prec;
  for (double s : scores) {
    const Counts c = match_at(f, s, iou_thr);
    rec.push_back(static_cast<double>(c.tp) / n_gt);
    prec.push_back(static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp));
  }
  double acc = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k * 0.01;
    double p = 0.0;
    for (std::size_t j = 0; j < rec.size(); ++j) {
      if (rec[j] >= r) p = std::max(p, prec[j]);
    }
    acc += p;
  }
  return acc / 101.0;
}

}  // namespace oracle
