#include "tfuse/mask_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <iomanip>
#include <stdexcept>

namespace tfuse {

namespace {
constexpr double kDegenerateGuard = 1e-12;
}

double BoxLevelMask::sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }

bool BoxLevelMask::is_binary() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

Tensor BoxLevelMask::to_tensor() const { return Tensor::from({1, height, width}, values); }

BoxLevelMask rasterize_boxes(const std::vector<GroundTruthBox>& boxes, std::size_t height, std::size_t width) {
  BoxLevelMask mask{height, width, std::vector<double>(height * width, 0.0)};
  for (const auto& gt : boxes) {
    const Box b = clip_box(gt.box, static_cast<double>(width), static_cast<double>(height));
    // Integer pixel p is inside iff lo <= p < hi, i.e. p in [ceil(lo), ceil(hi)).
    const auto y0 = static_cast<std::size_t>(std::ceil(b.y1));
    const auto y1 = static_cast<std::size_t>(std::ceil(b.y2));
    const auto x0 = static_cast<std::size_t>(std::ceil(b.x1));
    const auto x1 = static_cast<std::size_t>(std::ceil(b.x2));
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = x0; x < x1; ++x) mask(y, x) = 1.0;
    }
  }
  return mask;
}

BoxLevelMask downsample_mask_nearest(const BoxLevelMask& mask, std::size_t factor) {
  if (factor == 0 || mask.height % factor != 0 || mask.width % factor != 0) {
    throw std::invalid_argument("downsample_mask_nearest: factor " + std::to_string(factor) + " does not divide " +
                                std::to_string(mask.height) + "x" + std::to_string(mask.width));
  }
  BoxLevelMask out{mask.height / factor, mask.width / factor, {}};
  out.values.resize(out.height * out.width);
  for (std::size_t i = 0; i < out.height; ++i) {
    for (std::size_t j = 0; j < out.width; ++j) out(i, j) = mask(i * factor, j * factor);
  }
  return out;
}

Tensor stack_masks(const std::vector<BoxLevelMask>& masks) {
  if (masks.empty()) throw std::invalid_argument("stack_masks: empty list");
  const auto h = masks.front().height, w = masks.front().width;
  std::vector<double> values;
  values.reserve(masks.size() * h * w);
  for (const auto& m : masks) {
    if (m.height != h || m.width != w) throw ShapeError("stack_masks: masks differ in extent");
    values.insert(values.end(), m.values.begin(), m.values.end());
  }
  return Tensor::from({masks.size(), h, w}, std::move(values));
}

RelationMatrix relation_matrix(const Tensor& rgb, const Tensor& thermal, bool l2_normalize) {
  auto squeeze = [](const Tensor& t) -> Shape {
    if (t.rank() == 3) return t.shape();
    if (t.rank() == 4 && t.dim(0) == 1) return {t.dim(1), t.dim(2), t.dim(3)};
    throw ShapeError("relation_matrix: expected [c,h,w] or [1,c,h,w], got " + shape_to_string(t.shape()));
  };
  const Shape a = squeeze(rgb);
  const Shape b = squeeze(thermal);
  if (a != b) {
    throw ShapeError("relation_matrix: shape mismatch " + shape_to_string(a) + " vs " + shape_to_string(b));
  }
  const std::size_t c = a[0], hw = a[1] * a[2];
  std::vector<double> v(rgb.data().begin(), rgb.data().end());
  std::vector<double> t(thermal.data().begin(), thermal.data().end());
  if (l2_normalize) {
    for (auto* buf : {&v, &t}) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double n2 = 0.0;
        for (std::size_t p = 0; p < hw; ++p) n2 += (*buf)[ch * hw + p] * (*buf)[ch * hw + p];
        if (n2 <= 0.0) continue;
        const double inv = 1.0 / std::sqrt(n2);
        for (std::size_t p = 0; p < hw; ++p) (*buf)[ch * hw + p] *= inv;
      }
    }
  }
  RelationMatrix m{c, std::vector<double>(c * c, 0.0)};
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < hw; ++p) acc += v[i * hw + p] * t[j * hw + p];
      m.entries[i * c + j] = acc;
    }
  }
  return m;
}

RatioPair diagonal_ratios(const RelationMatrix& m) {
  const std::size_t c = m.channels;
  if (c < 2) throw std::invalid_argument("diagonal_ratios: need at least 2 channels");
  RatioPair out;
  std::vector<double> off(c - 1);
  for (std::size_t i = 0; i < c; ++i) {
    std::size_t k = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j != i) off[k++] = m(i, j);
    }
    const double mean = std::accumulate(off.begin(), off.end(), 0.0) / static_cast<double>(off.size());
    std::sort(off.begin(), off.end());
    const std::size_t n = off.size();
    const double median = n % 2 == 1 ? off[n / 2] : 0.5 * (off[n / 2 - 1] + off[n / 2]);
    if (std::abs(mean) < kDegenerateGuard || std::abs(median) < kDegenerateGuard) {
      out.degenerate = true;
      return out;
    }
    out.nr += m(i, i) / mean;
    out.ir += m(i, i) / median;
  }
  out.nr /= static_cast<double>(c);
  out.ir /= static_cast<double>(c);
  return out;
}

AnrAir anr_air(const std::vector<RelationMatrix>& matrices) {
  AnrAir out;
  for (const auto& m : matrices) {
    const auto r = diagonal_ratios(m);
    if (r.degenerate) {
      ++out.n_excluded;
      continue;
    }
    out.anr += r.nr;
    out.air += r.ir;
    ++out.n_used;
  }
  if (out.n_used == 0) {
    out.anr = out.air = std::numeric_limits<double>::quiet_NaN();
  } else {
    out.anr /= static_cast<double>(out.n_used);
    out.air /= static_cast<double>(out.n_used);
  }
  return out;
}

std::size_t count_false_positives(const std::vector<MatchResult>& matches, double score_threshold) {
  return static_cast<std::size_t>(std::count_if(matches.begin(), matches.end(), [&](const MatchResult& m) {
    return m.status == MatchStatus::fp && m.score >= score_threshold;
  }));
}

std::string anr_air_csv_header() { return "dataset,channels,anr,air,n_excluded\n"; }

std::string anr_air_csv_row(const std::string& dataset, std::size_t channels, const AnrAir& r) {
  std::ostringstream os;
  os << std::setprecision(10) << dataset << ',' << channels << ',' << r.anr << ',' << r.air << ',' << r.n_excluded
     << '\n';
  return os.str();
}

}  // namespace tfuse
