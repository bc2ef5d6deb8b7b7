#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "tfuse/mask_analysis.hpp"

using namespace tfuse;

namespace {
std::size_t union_cardinality(const std::vector<GroundTruthBox>& boxes, std::size_t h, std::size_t w) {
  std::size_t n = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x), py = static_cast<double>(y);
      for (const auto& b : boxes) {
        if (b.box.x1 <= px && px < b.box.x2 && b.box.y1 <= py && py < b.box.y2) {
          ++n;
          break;
        }
      }
    }
  return n;
}

RelationMatrix matrix(std::size_t c, std::vector<double> e) { return {c, std::move(e)}; }
}  // namespace

TEST_CASE("rasterize fills half-open box interiors") {
  auto one = rasterize_boxes({{{0, 0, 2, 2}}}, 4, 4);
  CHECK(one.sum() == 4.0);
  CHECK(one(1, 1) == 1.0);
  CHECK(one(2, 2) == 0.0);
  CHECK(rasterize_boxes({{{0, 0, 3, 3}}, {{1, 1, 4, 4}}}, 4, 4).sum() == 14.0);
  CHECK(rasterize_boxes({{{0.5, 0.5, 2, 2}}}, 4, 4).sum() == 1.0);
  CHECK(rasterize_boxes({{{-3, -3, 10, 1}}}, 4, 4).sum() == 4.0);
  CHECK(rasterize_boxes({}, 4, 4).sum() == 0.0);
}

TEST_CASE("rasterize matches brute-force union on random box sets") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<GroundTruthBox> boxes(static_cast<std::size_t>(rng.uniform_int(0, 6)));
    for (auto& b : boxes) {
      const double x = rng.uniform(-8, 40), y = rng.uniform(-8, 40);
      b.box = {x, y, x + rng.uniform(0, 20), y + rng.uniform(0, 20)};
    }
    const auto m = rasterize_boxes(boxes, 32, 32);
    CHECK(m.is_binary());
    CHECK(static_cast<std::size_t>(m.sum()) == union_cardinality(boxes, 32, 32));
  }
}

TEST_CASE("nearest downsampling") {
  BoxLevelMask checker{4, 4, std::vector<double>(16)};
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) checker(y, x) = (x + y) % 2 == 0 ? 1.0 : 0.0;
  const auto d = downsample_mask_nearest(checker, 2);
  CHECK(d.height == 2);
  CHECK(d.sum() == 4.0);
  CHECK(d.is_binary());
  CHECK_THROWS_AS(downsample_mask_nearest(checker, 3), std::invalid_argument);
  CHECK_THROWS_AS(downsample_mask_nearest(checker, 0), std::invalid_argument);
}

TEST_CASE("relation matrix") {
  // One-hot channel maps give the identity.
  Tensor eye = Tensor::zeros({3, 2, 2});
  for (std::size_t c = 0; c < 3; ++c) eye.mutable_data()[c * 4 + c] = 1.0;
  const auto id = relation_matrix(eye, eye);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(id(i, j) == (i == j ? 1.0 : 0.0));

  const auto zero = relation_matrix(eye, Tensor::zeros({1, 3, 2, 2}));
  for (double e : zero.entries) CHECK(e == 0.0);

  Rng rng(3);
  const Tensor a = oracle::random_tensor({4, 3, 5}, rng), b = oracle::random_tensor({4, 3, 5}, rng);
  const auto m = relation_matrix(a, b);
  const auto mt = relation_matrix(b, a);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double ref = 0.0;
      for (std::size_t p = 0; p < 15; ++p) ref += a.data()[i * 15 + p] * b.data()[j * 15 + p];
      CHECK(std::abs(m(i, j) - ref) < 1e-12);
      CHECK(m(i, j) == mt(j, i));
    }

  const auto n = relation_matrix(a, b, true);
  for (double e : n.entries) CHECK(std::abs(e) <= 1.0 + 1e-12);
  CHECK_THROWS_AS(relation_matrix(a, Tensor::zeros({4, 3, 4})), ShapeError);
}

TEST_CASE("ANR and AIR") {
  const auto r = anr_air({matrix(2, {2, 1, 1, 2})});
  CHECK(r.anr == 2.0);
  CHECK(r.air == 2.0);
  CHECK(anr_air({matrix(3, std::vector<double>(9, 0.7))}).anr == doctest::Approx(1.0).epsilon(1e-15));

  const auto mean = anr_air({matrix(2, {2, 1, 1, 2}), matrix(2, {4, 1, 1, 4})});
  CHECK(mean.anr == 3.0);
  CHECK(mean.n_used == 2);

  // Median and mean separate once there are three off-diagonal entries per row.
  const auto mm = diagonal_ratios(matrix(4, {6, 1, 1, 4, 1, 6, 1, 4, 1, 1, 6, 4, 1, 1, 4, 6}));
  CHECK(mm.nr == doctest::Approx(3.0));
  CHECK(mm.ir == doctest::Approx(6.0));

  Rng rng(11);
  for (int t = 0; t < 10; ++t) {
    auto e = oracle::random_values(16, rng, 0.1, 2.0);
    const double k = rng.uniform(0.1, 10.0);
    auto scaled = e;
    for (auto& x : scaled) x *= k;
    const auto p = diagonal_ratios(matrix(4, e)), q = diagonal_ratios(matrix(4, scaled));
    CHECK(std::abs(p.nr - q.nr) < 1e-12 * std::abs(p.nr));
    CHECK(std::abs(p.ir - q.ir) < 1e-12 * std::abs(p.ir));
  }

  const auto degenerate = anr_air({matrix(2, {1, 0, 0, 1})});
  CHECK(std::isnan(degenerate.anr));
  CHECK(degenerate.n_excluded == 1);
  const auto mixed = anr_air({matrix(2, {1, 0, 0, 1}), matrix(2, {2, 1, 1, 2})});
  CHECK(mixed.anr == 2.0);
  CHECK(mixed.n_excluded == 1);
  CHECK_THROWS(diagonal_ratios(matrix(1, {1})));
}

TEST_CASE("false positive counting respects the score threshold") {
  std::vector<MatchResult> ms(6);
  const double scores[] = {0.9, 0.5, 0.31, 0.3, 0.29, 0.95};
  for (std::size_t i = 0; i < 6; ++i) {
    ms[i].score = scores[i];
    ms[i].status = i == 5 ? MatchStatus::tp : MatchStatus::fp;
  }
  CHECK(count_false_positives(ms, 0.31) == 3);
  CHECK(count_false_positives(ms, 0.3) == 4);
}
