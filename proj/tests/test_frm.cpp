#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "tfuse/frm.hpp"

using namespace tfuse;

TEST_CASE("all-zero parameters give a 0.5 mask and 0.5 gates") {
  Rng rng(1);
  const Tensor f = oracle::random_tensor({2, 4, 3, 3}, rng);
  const auto out = frm_forward(f, FrmParams::zeros(4));
  CHECK(out.mask.shape() == Shape{2, 3, 3});
  CHECK(out.correlation.shape() == Shape{2, 4});
  CHECK(out.gates.shape() == Shape{2, 4});
  CHECK(out.refined.shape() == f.shape());
  for (double v : out.mask.data()) CHECK(v == 0.5);
  for (double v : out.gates.data()) CHECK(v == 0.5);
}

TEST_CASE("channel correlation is the cosine between mask and channel map") {
  const Tensor m = Tensor::from({1, 1, 2}, {0.5, 0.5});
  const Tensor f = Tensor::from({1, 2, 1, 2}, {1.0, 0.0, 3.0, 3.0});
  const Tensor v = channel_correlation(m, f);
  CHECK(v.data()[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(v.data()[1] == doctest::Approx(1.0).epsilon(1e-15));

  const Tensor dead = channel_correlation(m, Tensor::from({1, 2, 1, 2}, {0.0, 0.0, 1.0, 2.0}));
  CHECK(dead.data()[0] == 0.0);

  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const Tensor mask = oracle::random_tensor({2, 4, 4}, rng, 0.0, 1.0);
    const Tensor feat = oracle::random_tensor({2, 3, 4, 4}, rng);
    const double k = rng.uniform(0.1, 10.0);
    std::vector<double> scaled(feat.data().begin(), feat.data().end());
    for (auto& x : scaled) x *= k;
    const Tensor a = channel_correlation(mask, feat), b = channel_correlation(mask, Tensor::from(feat.shape(), scaled));
    for (std::size_t i = 0; i < a.numel(); ++i) {
      CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-12);
      CHECK(std::abs(a.data()[i]) <= 1.0 + 1e-12);
      // Oracle: direct cosine.
      const std::size_t n = i / 3, c = i % 3;
      double dot = 0, mm = 0, ff = 0;
      for (std::size_t q = 0; q < 16; ++q) {
        const double x = mask.data()[n * 16 + q], y = feat.data()[(n * 3 + c) * 16 + q];
        dot += x * y;
        mm += x * x;
        ff += y * y;
      }
      CHECK(std::abs(a.data()[i] - dot / std::sqrt(mm * ff)) < 1e-12);
    }
  }
  CHECK_THROWS_AS(channel_correlation(Tensor::zeros({1, 2, 4}), Tensor::zeros({1, 2, 2, 3})), ShapeError);
}

TEST_CASE("projection saturates with large biases") {
  auto p = FrmParams::zeros(4);
  p.proj_fc2_bias = Tensor::full({4}, 20.0);
  const Tensor s = project_correlation(Tensor::from({1, 4}, {0.3, -0.2, 0.9, 0.0}), p);
  for (double v : s.data()) CHECK(v > 1.0 - 1e-8);
  p.proj_fc2_bias = Tensor::full({4}, -20.0);
  const Tensor closed = project_correlation(Tensor::from({1, 4}, {0.3, -0.2, 0.9, 0.0}), p);
  for (double v : closed.data()) CHECK(v < 1e-8);
}

TEST_CASE("refine scales channels") {
  Rng rng(3);
  const Tensor f = oracle::random_tensor({2, 3, 2, 2}, rng);
  const Tensor g = oracle::random_tensor({2, 3}, rng, 0.0, 1.0);
  const Tensor r = refine(f, g);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t q = 0; q < 4; ++q) {
        const std::size_t i = (n * 3 + c) * 4 + q;
        CHECK(r.data()[i] == f.data()[i] * g.data()[n * 3 + c]);
      }
  const Tensor zeroed = refine(f, Tensor::zeros({2, 3}));
  for (double v : zeroed.data()) CHECK(v == 0.0);
  const Tensor same = refine(f, Tensor::full({2, 3}, 1.0));
  for (std::size_t i = 0; i < f.numel(); ++i) CHECK(same.data()[i] == f.data()[i]);
  CHECK_THROWS_AS(refine(f, Tensor::zeros({2, 4})), ShapeError);
}

TEST_CASE("frm forward equals the composed stages") {
  Rng rng(4);
  const auto p = FrmParams::init(8, rng);
  const Tensor f = oracle::random_tensor({2, 8, 4, 4}, rng);
  const auto out = frm_forward(f, p);
  const Tensor m = predict_mask(f, p);
  const Tensor v = channel_correlation(m, f);
  const Tensor s = project_correlation(v, p);
  const Tensor y = refine(f, s);
  for (std::size_t i = 0; i < m.numel(); ++i) {
    CHECK(out.mask.data()[i] == m.data()[i]);
    CHECK(m.data()[i] > 0.0);
    CHECK(m.data()[i] < 1.0);
  }
  for (std::size_t i = 0; i < s.numel(); ++i) CHECK(out.gates.data()[i] == s.data()[i]);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(out.refined.data()[i] == y.data()[i]);
  CHECK(p.parameters().size() == 8);
  CHECK(p.segmentation_parameters().size() + p.projection_parameters().size() == 8);
}
