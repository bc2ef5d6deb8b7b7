#include "tfuse/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "tfuse/config.hpp"
#include "tfuse/evaluation.hpp"
#include "tfuse/mask_analysis.hpp"
#include "tfuse/rng.hpp"
#include "tfuse/tft_io.hpp"

namespace tfuse {

namespace {

constexpr std::size_t kNoiseGrid = 5;
constexpr int kMinPedHeight = 16;
constexpr int kMaxPedHeight = 32;
constexpr int kMinPedWidth = 8;
constexpr int kPlacementTries = 30;

double quantize(double v) { return static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0))); }

/// Bilinear upsampling of a coarse uniform grid: smooth values in [0,1).
std::vector<double> low_frequency_noise(Rng& rng, std::size_t size) {
  std::array<double, kNoiseGrid * kNoiseGrid> grid{};
  for (auto& g : grid) g = rng.uniform();
  std::vector<double> out(size * size);
  const double scale = static_cast<double>(kNoiseGrid - 1) / static_cast<double>(size - 1);
  for (std::size_t y = 0; y < size; ++y) {
    const double gy = static_cast<double>(y) * scale;
    const auto y0 = std::min(static_cast<std::size_t>(gy), kNoiseGrid - 2);
    const double fy = gy - static_cast<double>(y0);
    for (std::size_t x = 0; x < size; ++x) {
      const double gx = static_cast<double>(x) * scale;
      const auto x0 = std::min(static_cast<std::size_t>(gx), kNoiseGrid - 2);
      const double fx = gx - static_cast<double>(x0);
      const double a = grid[y0 * kNoiseGrid + x0], b = grid[y0 * kNoiseGrid + x0 + 1];
      const double c = grid[(y0 + 1) * kNoiseGrid + x0], d = grid[(y0 + 1) * kNoiseGrid + x0 + 1];
      out[y * size + x] = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
    }
  }
  return out;
}

struct Rect {
  int x1, y1, x2, y2;
  bool overlaps(const Rect& o, int margin) const {
    return x1 < o.x2 + margin && o.x1 < x2 + margin && y1 < o.y2 + margin && o.y1 < y2 + margin;
  }
};

Rect pedestrian_rect(Rng& rng, int size) {
  const int h = static_cast<int>(rng.uniform_int(kMinPedHeight, kMaxPedHeight));
  const int w = std::max(kMinPedWidth, static_cast<int>(std::lround(h * rng.uniform(0.35, 0.5))));
  const int x = static_cast<int>(rng.uniform_int(0, size - w));
  const int y = static_cast<int>(rng.uniform_int(0, size - h));
  return {x, y, x + w, y + h};
}

Rect blob_rect(Rng& rng, int size) {
  const int h = static_cast<int>(rng.uniform_int(6, 20));
  const int w = static_cast<int>(rng.uniform_int(6, 20));
  const int x = static_cast<int>(rng.uniform_int(0, size - w));
  const int y = static_cast<int>(rng.uniform_int(0, size - h));
  return {x, y, x + w, y + h};
}

bool place(Rng& rng, int size, bool pedestrian_shape, const std::vector<Rect>& taken, Rect& out) {
  for (int i = 0; i < kPlacementTries; ++i) {
    const Rect r = pedestrian_shape ? pedestrian_rect(rng, size) : blob_rect(rng, size);
    if (std::none_of(taken.begin(), taken.end(), [&](const Rect& t) { return r.overlaps(t, 1); })) {
      out = r;
      return true;
    }
  }
  return false;
}

DatasetSample make_sample(std::uint64_t seed, Split split, std::size_t index, const DatasetOptions& opt) {
  const std::string label = to_string(split) + "/" + std::to_string(index);
  Rng rng(derive_seed(seed, label));
  const std::size_t n = opt.image_size;
  const int size = static_cast<int>(n);
  const std::size_t hw = n * n;

  DatasetSample s;
  s.id = derive_seed(seed, label + "/id");
  s.night = index % 2 == 1;
  s.pedestrian_paint.assign(hw, 0);

  std::vector<double> rgb(3 * hw), thermal(hw);
  {
    const auto tn = low_frequency_noise(rng, n);
    const double base = rng.uniform(0.15, 0.35);
    for (std::size_t p = 0; p < hw; ++p) thermal[p] = base + 0.2 * tn[p];
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const auto cn = low_frequency_noise(rng, n);
      const double cbase = rng.uniform(0.3, 0.6);
      for (std::size_t p = 0; p < hw; ++p) rgb[ch * hw + p] = cbase + 0.3 * (cn[p] - 0.5);
    }
  }
  auto paint_rgb = [&](const Rect& r, const std::array<double, 3>& color) {
    for (int y = r.y1; y < r.y2; ++y) {
      for (int x = r.x1; x < r.x2; ++x) {
        for (std::size_t ch = 0; ch < 3; ++ch) rgb[ch * hw + static_cast<std::size_t>(y * size + x)] = color[ch];
      }
    }
  };
  auto paint_thermal = [&](const Rect& r, double level) {
    for (int y = r.y1; y < r.y2; ++y) {
      for (int x = r.x1; x < r.x2; ++x) thermal[static_cast<std::size_t>(y * size + x)] = level;
    }
  };
  auto contrasting_color = [&](const Rect& r) {
    std::array<double, 3> color{};
    const auto centre = static_cast<std::size_t>(((r.y1 + r.y2) / 2) * size + (r.x1 + r.x2) / 2);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double bg = rgb[ch * hw + centre];
      const double delta = rng.uniform(0.25, 0.45);
      color[ch] = rng.bernoulli(0.5) ? bg + delta : bg - delta;
      if (color[ch] < 0.0 || color[ch] > 1.0) color[ch] = bg > 0.5 ? bg - delta : bg + delta;
    }
    return color;
  };

  std::vector<Rect> taken;
  const auto n_ped = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(opt.max_pedestrians)));
  const auto n_dis = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(opt.max_distractors)));
  std::vector<Rect> pedestrians;
  for (std::size_t i = 0; i < n_ped; ++i) {
    Rect r{};
    if (place(rng, size, true, taken, r)) {
      pedestrians.push_back(r);
      taken.push_back(r);
    }
  }
  for (std::size_t i = 0; i < n_dis; ++i) {
    const bool thermal_only = rng.bernoulli(0.5);
    Rect r{};
    if (!place(rng, size, !thermal_only, taken, r)) continue;
    taken.push_back(r);
    if (thermal_only) {
      paint_thermal(r, rng.uniform(0.7, 0.95));
    } else {
      paint_rgb(r, contrasting_color(r));
      paint_thermal(r, rng.uniform(0.05, 0.15));
    }
  }
  for (const auto& r : pedestrians) {
    paint_rgb(r, contrasting_color(r));
    paint_thermal(r, rng.uniform(0.7, 0.95));
    for (int y = r.y1; y < r.y2; ++y) {
      for (int x = r.x1; x < r.x2; ++x) s.pedestrian_paint[static_cast<std::size_t>(y * size + x)] = 1;
    }
    s.boxes.push_back({Box{double(r.x1), double(r.y1), double(r.x2), double(r.y2)}, Occlusion::none});
  }

  if (s.night) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double m = 0.0;
      for (std::size_t p = 0; p < hw; ++p) m += rgb[ch * hw + p];
      m /= static_cast<double>(hw);
      for (std::size_t p = 0; p < hw; ++p) rgb[ch * hw + p] = m + opt.night_attenuation * (rgb[ch * hw + p] - m);
    }
  }
  for (auto& v : rgb) v = quantize(v + 0.02 * rng.normal());
  for (auto& v : thermal) v = quantize(v + 0.02 * rng.normal());
  s.rgb = Tensor::from({3, n, n}, std::move(rgb));
  s.thermal = Tensor::from({1, n, n}, std::move(thermal));
  return s;
}

}  // namespace

std::string to_string(Split s) { return s == Split::train ? "train" : "val"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw std::invalid_argument("unknown split '" + s + "' (expected train or val)");
}

DatasetOptions DatasetOptions::from_config(const ExperimentConfig& cfg) {
  return {cfg.image_size, cfg.max_pedestrians, cfg.max_distractors, cfg.night_attenuation};
}

std::vector<DatasetSample> generate_dataset(std::uint64_t seed, std::size_t n_images, Split split,
                                            const DatasetOptions& options) {
  if (n_images == 0) throw std::invalid_argument("generate_dataset: n_images must be >= 1");
  if (options.image_size < 2 * static_cast<std::size_t>(kMaxPedHeight)) {
    throw std::invalid_argument("generate_dataset: image_size must be at least 64");
  }
  std::vector<DatasetSample> out(n_images);
  const auto n = static_cast<std::ptrdiff_t>(n_images);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = make_sample(seed, split, static_cast<std::size_t>(i), options);
  }
  return out;
}

std::vector<std::vector<GroundTruthBox>> ground_truth_of(const std::vector<DatasetSample>& samples) {
  std::vector<std::vector<GroundTruthBox>> gt;
  gt.reserve(samples.size());
  for (const auto& s : samples) gt.push_back(s.boxes);
  return gt;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<DatasetSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("save_dataset: no samples");
  std::filesystem::create_directories(dir / "rgb");
  std::filesystem::create_directories(dir / "thermal");
  std::ostringstream meta;
  meta << "n_images " << samples.size() << '\n' << "image_size " << samples.front().rgb.dim(1) << '\n';
  for (std::size_t i = 0; i < samples.size(); ++i) {
    write_tft(dir / "rgb" / (std::to_string(i) + ".tft"), samples[i].rgb);
    write_tft(dir / "thermal" / (std::to_string(i) + ".tft"), samples[i].thermal);
    meta << "image " << i << ' ' << samples[i].id << ' ' << (samples[i].night ? "night" : "day") << '\n';
  }
  write_text_atomic(dir / "gt.txt", format_ground_truth(ground_truth_of(samples)));
  write_text_atomic(dir / "meta.txt", meta.str());
}

std::vector<DatasetSample> load_dataset(const std::filesystem::path& dir) {
  std::istringstream meta(read_text(dir / "meta.txt"));
  std::string key;
  std::size_t n_images = 0, image_size = 0;
  meta >> key >> n_images >> key >> image_size;
  if (!meta || n_images == 0) throw std::runtime_error("load_dataset: malformed meta.txt in " + dir.string());
  const auto gt = read_ground_truth(dir / "gt.txt", n_images);
  if (gt.size() != n_images) throw std::runtime_error("load_dataset: gt.txt references images beyond n_images");
  std::vector<DatasetSample> out(n_images);
  for (std::size_t i = 0; i < n_images; ++i) {
    std::size_t idx = 0;
    std::string tod;
    meta >> key >> idx >> out[i].id >> tod;
    if (!meta || key != "image" || idx != i) throw std::runtime_error("load_dataset: malformed image line " + std::to_string(i));
    out[i].night = tod == "night";
    out[i].rgb = read_tft(dir / "rgb" / (std::to_string(i) + ".tft"));
    out[i].thermal = read_tft(dir / "thermal" / (std::to_string(i) + ".tft"));
    if (out[i].rgb.shape() != Shape{3, image_size, image_size} ||
        out[i].thermal.shape() != Shape{1, image_size, image_size}) {
      throw ShapeError("load_dataset: image " + std::to_string(i) + " has unexpected extents");
    }
    out[i].boxes = gt[i];
    const auto mask = rasterize_boxes(gt[i], image_size, image_size);
    out[i].pedestrian_paint.resize(mask.values.size());
    std::transform(mask.values.begin(), mask.values.end(), out[i].pedestrian_paint.begin(),
                   [](double v) { return static_cast<std::uint8_t>(v); });
  }
  return out;
}

}  // namespace tfuse
