#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "tfuse/checkpoint.hpp"
#include "tfuse/config.hpp"
#include "tfuse/dataset.hpp"
#include "tfuse/inference.hpp"
#include "tfuse/mask_analysis.hpp"
#include "tfuse/model.hpp"
#include "tfuse/ops.hpp"
#include "tfuse/tft_io.hpp"
#include "tfuse/train.hpp"

using namespace tfuse;
namespace fs = std::filesystem;

namespace {
ExperimentConfig small_config() {
  ExperimentConfig c;
  c.n_train = 48;
  c.n_val = 16;
  c.epochs = 2;
  c.batch_size = 8;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("tfuse_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

bool same_values(const ParameterSet& a, const ParameterSet& b) {
  if (a.size() != b.size()) return false;
  const auto ta = a.tensors(), tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!std::equal(ta[i].data().begin(), ta[i].data().end(), tb[i].data().begin(), tb[i].data().end())) return false;
  }
  return true;
}

// Parameter files hold 32-bit floats.
bool same_as_float32(const ParameterSet& stored, const ParameterSet& live) {
  if (stored.size() != live.size()) return false;
  const auto ta = stored.tensors(), tb = live.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    for (std::size_t j = 0; j < ta[i].numel(); ++j) {
      if (ta[i].data()[j] != static_cast<double>(static_cast<float>(tb[i].data()[j]))) return false;
    }
  }
  return true;
}

std::string file_bytes(const fs::path& p) { return read_text(p); }
}  // namespace

TEST_CASE("config text round trip and hash") {
  ExperimentConfig c;
  c.alpha = 0.123456789012345;
  c.ffm_variant = FfmVariant::adaptive_rp_convcc;
  c.seed = 99;
  const auto back = ExperimentConfig::from_text(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.hash() == c.hash());
  CHECK(back.alpha == c.alpha);
  ExperimentConfig d = c;
  d.seed = 100;
  CHECK(d.hash() != c.hash());
  CHECK(c.hash().size() == 16);
  CHECK_THROWS(ExperimentConfig::from_text("no_such_key = 1\n"));
  CHECK(ExperimentConfig::from_text("# comment\nepochs = 3\n").epochs == 3);

  ExperimentConfig bad;
  bad.frm_enabled = false;
  CHECK_THROWS(bad.validate());
  bad = ExperimentConfig{};
  bad.channels = 10;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("ablation rows toggle exactly the module and loss flags") {
  const ExperimentConfig base;
  const auto r0 = apply_ablation(base, AblationRow::ffm);
  CHECK_FALSE(r0.frm_enabled);
  CHECK_FALSE(r0.corr_max_active());
  const auto r1 = apply_ablation(base, AblationRow::ffm_frm);
  CHECK(r1.frm_enabled);
  CHECK_FALSE(r1.use_seg);
  CHECK_FALSE(r1.use_neg_corr);
  const auto r2 = apply_ablation(base, AblationRow::ffm_frm_seg);
  CHECK(r2.use_seg);
  CHECK_FALSE(r2.use_neg_corr);
  const auto r3 = apply_ablation(base, AblationRow::ffm_frm_seg_neg);
  CHECK(r3.use_seg);
  CHECK(r3.use_neg_corr);
  for (auto r : {r0, r1, r2, r3}) CHECK_NOTHROW(r.validate());
}

TEST_CASE("dataset generation is deterministic and consistent") {
  const auto a = generate_dataset(5, 12, Split::train);
  const auto b = generate_dataset(5, 12, Split::train);
  const auto v = generate_dataset(5, 12, Split::val);
  REQUIRE(a.size() == 12);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::equal(a[i].rgb.data().begin(), a[i].rgb.data().end(), b[i].rgb.data().begin()));
    CHECK(std::equal(a[i].thermal.data().begin(), a[i].thermal.data().end(), b[i].thermal.data().begin()));
    CHECK(a[i].boxes.size() == b[i].boxes.size());
    CHECK(a[i].night == (i % 2 == 1));
    CHECK(a[i].rgb.shape() == Shape{3, 64, 64});
    CHECK(a[i].boxes.size() <= 3);
    differs = differs || !std::equal(a[i].thermal.data().begin(), a[i].thermal.data().end(), v[i].thermal.data().begin());
    for (double x : a[i].rgb.data()) REQUIRE((x >= 0.0 && x <= 1.0));
    for (double x : a[i].thermal.data()) REQUIRE((x >= 0.0 && x <= 1.0));
    for (const auto& g : a[i].boxes) {
      CHECK(g.box.x1 >= 0.0);
      CHECK(g.box.y1 >= 0.0);
      CHECK(g.box.x2 <= 64.0);
      CHECK(g.box.y2 <= 64.0);
    }
    const auto m = rasterize_boxes(a[i].boxes, 64, 64);
    for (std::size_t p = 0; p < m.values.size(); ++p) CHECK(m.values[p] == static_cast<double>(a[i].pedestrian_paint[p]));
  }
  CHECK(differs);
  CHECK(generate_dataset(1, 1, Split::val).size() == 1);
  CHECK_THROWS(generate_dataset(1, 0, Split::train));
}

TEST_CASE("dataset and tensor files round trip") {
  const auto dir = scratch_dir("data");
  const auto a = generate_dataset(3, 4, Split::val);
  save_dataset(dir, a);
  const auto b = load_dataset(dir);
  REQUIRE(b.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::equal(a[i].rgb.data().begin(), a[i].rgb.data().end(), b[i].rgb.data().begin()));
    CHECK(a[i].pedestrian_paint == b[i].pedestrian_paint);
    CHECK(a[i].night == b[i].night);
  }
  Rng rng(1);
  const Tensor t = oracle::random_tensor({2, 3, 4}, rng, -1e3, 1e3);
  const Tensor u = decode_tft(encode_tft(t));
  CHECK(u.shape() == t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) CHECK(u.data()[i] == static_cast<double>(static_cast<float>(t.data()[i])));
  auto bytes = encode_tft(t);
  bytes.resize(bytes.size() - 1);
  CHECK_THROWS(decode_tft(bytes));
  fs::remove_all(dir);
}

TEST_CASE("shared backbone") {
  Rng rng(2);
  const auto bb = BackboneParams::init(16, rng);
  const Tensor img = oracle::random_tensor({2, 1, 64, 64}, rng, 0.0, 1.0);
  const auto pair = backbone_forward(img, img, bb);
  CHECK(pair.rgb.shape() == Shape{2, 16, 8, 8});
  CHECK(std::equal(pair.rgb.data().begin(), pair.rgb.data().end(), pair.thermal.data().begin()));

  const Tensor other = oracle::random_tensor({2, 1, 64, 64}, rng, 0.0, 1.0);
  auto grad_of = [&](int which) {
    const auto p = bb.parameters();
    const auto ts = p.tensors();
    for (auto t : ts) t.zero_grad();
    const auto fp = backbone_forward(img, other, bb);
    Tensor loss;
    if (which == 0) loss = sum(fp.rgb);
    if (which == 1) loss = sum(fp.thermal);
    if (which == 2) loss = add(sum(fp.rgb), sum(fp.thermal));
    loss.backward();
    std::vector<double> g(ts[0].grad().begin(), ts[0].grad().end());
    for (auto t : ts) t.zero_grad();
    return g;
  };
  const auto gr = grad_of(0), gt = grad_of(1), both = grad_of(2);
  for (std::size_t i = 0; i < both.size(); ++i) CHECK(std::abs(both[i] - (gr[i] + gt[i])) < 1e-10);

  const Tensor luma = luminance(Tensor::from({1, 3, 1, 1}, {1.0, 0.0, 0.0}));
  CHECK(luma.data()[0] == doctest::Approx(0.299));
}

TEST_CASE("head and box coding") {
  const auto out = head_forward(Tensor::full({1, 16, 8, 8}, 0.3), HeadParams::zeros(16));
  CHECK(out.objectness.shape() == Shape{1, 8, 8});
  CHECK(out.ltrb.shape() == Shape{1, 4, 8, 8});
  for (double v : out.objectness.data()) CHECK(v == 0.5);
  for (double v : out.ltrb.data()) CHECK(v > 0.0);

  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const double x = rng.uniform(0, 40), y = rng.uniform(0, 40);
    const Box b{x, y, x + rng.uniform(4, 24), y + rng.uniform(4, 24)};
    const auto row = static_cast<std::size_t>(rng.uniform_int(0, 7)), col = static_cast<std::size_t>(rng.uniform_int(0, 7));
    const Box d = decode_ltrb(encode_ltrb(b, row, col, 8), row, col, 8);
    CHECK(std::abs(d.x1 - b.x1) < 1e-9);
    CHECK(std::abs(d.y1 - b.y1) < 1e-9);
    CHECK(std::abs(d.x2 - b.x2) < 1e-9);
    CHECK(std::abs(d.y2 - b.y2) < 1e-9);
  }
}

TEST_CASE("target assignment: centre inside, smaller box wins") {
  const std::vector<std::vector<GroundTruthBox>> boxes{{{{0, 0, 24, 24}}, {{8, 8, 16, 16}}}};
  const auto t = assign_targets(boxes, 8, 8, 8);
  CHECK(t.n_positive == 9);
  CHECK(t.positive.at({0, 1, 1}) == 1.0);
  CHECK(t.positive.at({0, 3, 3}) == 0.0);
  // Cell (1,1) has centre (12,12), inside both; the 8x8 box is chosen.
  const auto expect = encode_ltrb({8, 8, 16, 16}, 1, 1, 8);
  for (std::size_t k = 0; k < 4; ++k) CHECK(t.ltrb.at({0, k, 1, 1}) == expect[k]);
  const auto m = mask_targets(boxes, 64, 8);
  CHECK(m.shape() == Shape{1, 8, 8});
  CHECK(m.at({0, 3, 3}) == 0.0);
  CHECK(m.at({0, 1, 1}) == 1.0);
}

TEST_CASE("nms agrees with an exhaustive suppression oracle") {
  const Detection a{{0, 0, 10, 10}, 0.9, 0}, b{{0, 0, 10, 10}, 0.8, 0};
  const auto two = nms({b, a}, 0.5);
  REQUIRE(two.size() == 1);
  CHECK(two[0].score == 0.9);

  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Detection> dets(20);
    for (auto& d : dets) {
      const double x = rng.uniform(0, 30), y = rng.uniform(0, 30);
      d = {{x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20)}, rng.uniform(), 0};
    }
    // Oracle: a box survives iff no surviving higher-scored box overlaps it at IoU >= 0.5,
    // evaluated by repeatedly scanning the full set.
    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto i, auto j) { return dets[i].score > dets[j].score; });
    std::vector<bool> alive(dets.size(), false);
    for (std::size_t r = 0; r < order.size(); ++r) {
      bool keep = true;
      for (std::size_t q = 0; q < r; ++q) {
        if (alive[order[q]] && iou(dets[order[q]].box, dets[order[r]].box) >= 0.5) keep = false;
      }
      alive[order[r]] = keep;
    }
    std::vector<double> expected;
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (alive[i]) expected.push_back(dets[i].score);
    std::sort(expected.rbegin(), expected.rend());
    const auto kept = nms(dets, 0.5);
    REQUIRE(kept.size() == expected.size());
    for (std::size_t i = 0; i < kept.size(); ++i) CHECK(kept[i].score == expected[i]);
  }
}

TEST_CASE("decoding a single confident cell") {
  HeadOutput out{Tensor::full({1, 8, 8}, 0.01), Tensor::full({1, 4, 8, 8}, 1.0)};
  out.objectness.mutable_data()[2 * 8 + 3] = 0.9;
  const auto dets = decode_and_nms(out, 0, 8, 64, 0.05, 0.5, 7);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].score == 0.9);
  CHECK(dets[0].image_id == 7);
  CHECK(dets[0].box == Box{20, 12, 36, 28});
}

TEST_CASE("learning rate schedule") {
  ExperimentConfig c;
  CHECK(learning_rate_at(c, 0, 120) == 0.01);
  CHECK(learning_rate_at(c, 79, 120) == 0.01);
  CHECK(learning_rate_at(c, 80, 120) == doctest::Approx(0.001));
  CHECK(learning_rate_at(c, 110, 120) == doctest::Approx(0.0001));
  CHECK(steps_per_epoch(c, 2000) == 250);
  CHECK_THROWS(steps_per_epoch(c, 4));
}

TEST_CASE("FRM with open gates and no correlation loss reduces to the baseline") {
  auto base = apply_ablation(small_config(), AblationRow::ffm);
  const auto data = generate_dataset(base.data_seed, base.n_train, Split::train);
  const auto ref = train(base, data);

  auto reduced = small_config();
  reduced.frm_gates_open = true;
  reduced.use_seg = false;
  reduced.use_neg_corr = true;
  reduced.alpha = 0.0;
  const auto a = train(reduced, data);
  reduced.use_neg_corr = false;
  const auto b = train(reduced, data);
  for (const auto* r : {&a, &b}) {
    CHECK(same_values(r->params.backbone.parameters(), ref.params.backbone.parameters()));
    CHECK(same_values(r->params.ffm.parameters(), ref.params.ffm.parameters()));
    CHECK(same_values(r->params.head.parameters(), ref.params.head.parameters()));
  }
}

TEST_CASE("training is deterministic and checkpoints round trip") {
  const auto cfg = small_config();
  const auto data = generate_dataset(cfg.data_seed, cfg.n_train, Split::train);
  const auto r1 = train(cfg, data);
  const auto r2 = train(cfg, data);
  CHECK(r1.loss_csv == r2.loss_csv);
  CHECK(r1.loss_csv.rfind("# config_hash " + cfg.hash(), 0) == 0);
  CHECK(r1.history.size() == 2 * 6);

  const auto d1 = scratch_dir("ck1"), d2 = scratch_dir("ck2");
  save_checkpoint(d1, cfg, r1.params);
  save_checkpoint(d2, cfg, r2.params);
  for (const auto& e : fs::recursive_directory_iterator(d1)) {
    if (!e.is_regular_file()) continue;
    CHECK(file_bytes(e.path()) == file_bytes(d2 / fs::relative(e.path(), d1)));
  }
  const auto ck = load_checkpoint(d1);
  CHECK(ck.config.hash() == cfg.hash());
  CHECK(same_as_float32(ck.params.parameters(), r1.params.parameters()));

  // A config edited after saving no longer matches the manifest.
  write_text_atomic(d2 / "config.txt", [&] {
    auto c = cfg;
    c.seed = 42;
    return c.to_text();
  }());
  CHECK_THROWS(load_checkpoint(d2));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("evaluation: rejects empty input, training lowers MR on the training set") {
  auto cfg = small_config();
  cfg.epochs = 8;
  const auto data = generate_dataset(cfg.data_seed, cfg.n_train, Split::train);
  const Checkpoint untrained{cfg, DetectorParams::init(cfg)};
  CHECK_THROWS(evaluate_model(untrained, {}));
  const double before = evaluate_model(untrained, data).report.mr;
  const auto res = train(cfg, data);
  const Checkpoint trained{cfg, res.params};
  const auto e1 = evaluate_model(trained, data);
  const auto e2 = evaluate_model(trained, data);
  CHECK(e1.report.mr < before);
  CHECK(e1.report.mr == e2.report.mr);
  CHECK(format_detections(e1.detections) == format_detections(e2.detections));

  std::size_t n = res.history.size(), k = n / 10;
  double first = 0, last = 0;
  for (std::size_t i = 0; i < k; ++i) {
    first += res.history[i].total;
    last += res.history[n - 1 - i].total;
  }
  CHECK(last < first);
  for (const auto& h : res.history) {
    CHECK(std::abs(h.corr_max - (h.seg + h.alpha * h.neg_corr)) < 1e-12);
    CHECK(std::abs(h.total - (h.det_cls + h.det_reg + h.corr_max)) < 1e-12);
  }
}

TEST_CASE("divergence guard") {
  auto cfg = small_config();
  cfg.lr = 1e300;
  const auto data = generate_dataset(cfg.data_seed, cfg.n_train, Split::train);
  CHECK_THROWS_AS(train(cfg, data), TrainingDiverged);
}
