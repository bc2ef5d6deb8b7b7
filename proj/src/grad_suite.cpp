#include "tfuse/grad_suite.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "tfuse/config.hpp"
#include "tfuse/dataset.hpp"
#include "tfuse/ffm.hpp"
#include "tfuse/frm.hpp"
#include "tfuse/losses.hpp"
#include "tfuse/model.hpp"
#include "tfuse/ops.hpp"
#include "tfuse/rng.hpp"

namespace tfuse {

namespace {

constexpr double kOpTol = 1e-6;
constexpr double kFullTol = 1e-5;
// A scalar near 1 carries ~1e-16 absolute rounding, i.e. 1e-11 to 1e-10 in a
// central difference at step 1e-5. Smaller gradients are not probed, with a
// margin of about 5x below each tolerance.
constexpr double kOpMinGrad = 5e-4;
constexpr double kFullMinGrad = 5e-5;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

// Values bounded away from zero, so rectifier kinks stay outside the finite-difference step.
Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  const double gap = 0.025 * (hi - lo);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    do {
      x = rng.uniform(lo, hi);
    } while (std::abs(x) < gap);
  }
  return Tensor::from(shape, std::move(v), true);
}

Tensor random_probabilities(const Shape& shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(0.05, 0.95);
  return Tensor::from(shape, std::move(v), true);
}

Tensor random_binary(const Shape& shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.bernoulli(0.4) ? 1.0 : 0.0;
  return Tensor::from(shape, std::move(v));
}

/// Sampling positions whose fractional parts stay in [0.1, 0.9], away from
/// the interpolation kinks at integer coordinates.
Tensor generic_coords(const Shape& shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = std::floor(rng.uniform(lo, hi)) + rng.uniform(0.1, 0.9);
  return Tensor::from(shape, std::move(v), true);
}

/// sum(out * W) for a fixed random W with |W| in [0.25, 1], so every output
/// element matters.
std::function<Tensor(const Tensor&)> projector(const Shape& shape, Rng& rng) {
  std::vector<double> w(shape_numel(shape));
  for (auto& x : w) x = rng.uniform(0.25, 1.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  const Tensor weights = Tensor::from(shape, std::move(w));
  return [weights](const Tensor& out) { return sum(mul(out, weights)); };
}

std::string dims(const Shape& s) { return shape_to_string(s); }

struct Runner {
  std::string suite;
  std::uint64_t seed;
  std::vector<GradCase> cases;

  void check(const std::string& name, const std::string& shape, const std::function<Tensor()>& f,
             std::vector<Tensor> inputs, double tol = kOpTol, std::size_t budget = 0, double min_abs_grad = kOpMinGrad) {
    GradCheckOptions opt;
    opt.tol = tol;
    opt.n_probes = 10;
    opt.probe_budget = budget;
    opt.min_abs_grad = min_abs_grad;
    opt.kink_screen = true;
    opt.seed = derive_seed(seed, suite + "/" + name + "/" + std::to_string(cases.size()));
    cases.push_back({suite, name, shape, grad_check(f, std::move(inputs), opt)});
  }
};

void ops_suite(Runner& r, Rng& rng, std::size_t n_shapes) {
  for (std::size_t s = 0; s < n_shapes; ++s) {
    const std::size_t b = pick(rng, 1, 2), h = pick(rng, 4, 7), w = pick(rng, 4, 7);
    const std::size_t k = rng.bernoulli(0.5) ? 3 : 1, stride = pick(rng, 1, 2), pad = rng.bernoulli(0.5) ? k / 2 : 0;
    {
      const std::size_t ci = pick(rng, 2, 3), co = pick(rng, 2, 3);
      Tensor x = random_tensor({b, ci, h, w}, rng), kern = random_tensor({co, ci, k, k}, rng), bias = random_tensor({co}, rng);
      const Tensor probe_out = conv2d(x.detach(), kern.detach(), bias.detach(), stride, pad);
      auto proj = projector(probe_out.shape(), rng);
      r.check("conv2d", dims(x.shape()) + " k" + std::to_string(k) + " s" + std::to_string(stride) + " p" + std::to_string(pad),
              [=] { return proj(conv2d(x, kern, bias, stride, pad)); }, {x, kern, bias});
    }
    {
      const std::size_t g = pick(rng, 2, 3), ci = g * pick(rng, 1, 2), co = g * pick(rng, 1, 2);
      Tensor x = random_tensor({b, ci, h, w}, rng), kern = random_tensor({co, ci / g, k, k}, rng), bias = random_tensor({co}, rng);
      const Tensor probe_out = grouped_conv2d(x.detach(), kern.detach(), bias.detach(), g, stride, pad);
      auto proj = projector(probe_out.shape(), rng);
      r.check("grouped_conv2d", dims(x.shape()) + " g" + std::to_string(g) + " k" + std::to_string(k),
              [=] { return proj(grouped_conv2d(x, kern, bias, g, stride, pad)); }, {x, kern, bias});
    }
    {
      const std::size_t c = pick(rng, 1, 3), ho = pick(rng, 3, 5), wo = pick(rng, 3, 5);
      Tensor x = random_tensor({b, c, h, w}, rng);
      Tensor coords = generic_coords({b, 2, ho, wo}, rng, -1.0, static_cast<double>(std::max(h, w)));
      auto proj = projector({b, c, ho, wo}, rng);
      r.check("bilinear_sample", dims(x.shape()) + " -> " + dims({b, c, ho, wo}),
              [=] { return proj(bilinear_sample(x, coords)); }, {x, coords});
    }
    {
      const std::size_t c = pick(rng, 1, 4);
      Tensor x = random_tensor({b, c, h, w}, rng);
      auto proj = projector({b, c, 1, 1}, rng);
      r.check("global_avg_pool", dims(x.shape()), [=] { return proj(global_avg_pool(x)); }, {x});
      Tensor gate_logits = random_tensor({b, c, 1, 1}, rng);
      auto proj2 = projector({b, c, h, w}, rng);
      r.check("channel_gating", dims(x.shape()), [=] { return proj2(scale_channels(x, sigmoid(gate_logits))); },
              {x, gate_logits});
    }
    {
      const Shape sh{b, pick(rng, 1, 3), h, w};
      Tensor a = random_tensor(sh, rng), c = random_tensor(sh, rng);
      Tensor pos = random_probabilities(sh, rng);
      auto proj = projector(sh, rng);
      r.check("elementwise", dims(sh),
              [=] {
                Tensor t = add(mul(relu(a), sigmoid(c)), sub(softplus(a), scale(c, 0.5)));
                t = add(t, log(add_scalar(pos, 0.5)));
                t = add(t, clamp(pos, 0.0, 1.0));
                return proj(t);
              },
              {a, c, pos});
      Tensor x2 = random_tensor({b, 2, h, w}, rng);
      auto proj2 = projector({b, 3, h, w}, rng);
      r.check("reshape_concat_slice", dims(sh),
              [=] {
                Tensor t = concat_channels(slice_channels(x2, 1, 1), x2);
                t = reshape(t, {b * 3 * h * w});
                return proj2(reshape(add_n({t, t, scale(t, 2.0)}), {b, 3, h, w}));
              },
              {x2});
      r.check("sum_mean", dims(sh), [=] { return add(mean(mul(a, a)), sum(mul(c, a))); }, {a, c});
    }
  }
}

void ffm_suite(Runner& r, Rng& rng, std::size_t n_shapes) {
  for (std::size_t s = 0; s < n_shapes; ++s) {
    const std::size_t b = pick(rng, 1, 2), c = 4 * pick(rng, 1, 2), h = pick(rng, 3, 6), w = pick(rng, 3, 6);
    const std::string desc = dims({b, c, h, w});
    Tensor rgb = random_tensor({b, c, h, w}, rng), th = random_tensor({b, c, h, w}, rng);
    {
      auto proj = projector({b, 2 * c, h, w}, rng);
      r.check("riffle_shuffle", desc, [=] { return proj(riffle_shuffle({rgb, th})); }, {rgb, th});
    }
    {
      Tensor offsets = generic_coords({b, 18, h, w}, rng, -2.0, 2.0);
      Tensor gw = random_tensor({c, 2, 3, 3}, rng), gb = random_tensor({c}, rng);
      auto proj = projector({b, c, h, w}, rng);
      r.check("deformable_fuse", desc, [=] { return proj(deformable_fuse({rgb, th}, offsets, gw, gb)); },
              {rgb, th, offsets, gw, gb});
    }
    for (FfmVariant v : {FfmVariant::adaptive_rp_globalcc, FfmVariant::fixed_rp, FfmVariant::adaptive_rp_convcc}) {
      Rng init_rng(rng.next_u64());
      FfmParams p = FfmParams::init({c, v, 3, 4}, init_rng);
      if (uses_global_cc(v)) {
        // Small weights and a positive bias keep the few bottleneck rectifiers alive.
        p.gcc_fc1_kernel = random_tensor(p.gcc_fc1_kernel.shape(), rng, -0.5, 0.5);
        p.gcc_fc1_bias = random_tensor(p.gcc_fc1_bias.shape(), rng, 0.5, 1.5);
        p.gcc_fc2_bias = random_tensor(p.gcc_fc2_bias.shape(), rng, -0.5, 0.5);
      }
      if (is_adaptive(v)) {
        // Generic (non-zero, non-integer) offsets keep sampling off the lattice.
        p.offset_kernel = random_tensor(p.offset_kernel.shape(), rng, -0.05, 0.05);
        p.offset_bias = generic_coords(p.offset_bias.shape(), rng, -1.0, 1.0);
      }
      std::vector<Tensor> inputs{rgb, th};
      for (const Tensor& t : p.parameters().tensors()) inputs.push_back(t);
      auto proj = projector({b, c, h, w}, rng);
      r.check("ffm_forward/" + to_string(v), desc, [=] { return proj(ffm_forward({rgb, th}, p).fused); }, inputs);
      if (uses_global_cc(v)) {
        Tensor x = random_tensor({b, c, h, w}, rng);
        auto proj2 = projector({b, c, 1, 1}, rng);
        r.check("global_cc_gates", desc, [=] { return proj2(global_cc_gates(x, p)); },
                {x, p.gcc_fc1_kernel, p.gcc_fc1_bias, p.gcc_fc2_kernel, p.gcc_fc2_bias});
      }
    }
  }
}

void frm_suite(Runner& r, Rng& rng, std::size_t n_shapes) {
  for (std::size_t s = 0; s < n_shapes; ++s) {
    const std::size_t b = pick(rng, 1, 2), c = 2 * pick(rng, 2, 4), h = pick(rng, 3, 6), w = pick(rng, 3, 6);
    const std::string desc = dims({b, c, h, w});
    Tensor fused = random_tensor({b, c, h, w}, rng);
    Tensor mask = random_probabilities({b, h, w}, rng);
    {
      auto proj = projector({b, c}, rng);
      r.check("channel_correlation", desc, [=] { return proj(channel_correlation(mask, fused)); }, {mask, fused});
    }
    Rng init_rng(rng.next_u64());
    FrmParams p = FrmParams::init(c, init_rng);
    p.seg_conv1_bias = random_tensor(p.seg_conv1_bias.shape(), rng, -0.5, 0.5);
    p.proj_fc1_kernel = random_tensor(p.proj_fc1_kernel.shape(), rng, -0.5, 0.5);
    p.proj_fc1_bias = random_tensor(p.proj_fc1_bias.shape(), rng, 0.5, 1.5);
    {
      auto proj = projector({b, h, w}, rng);
      std::vector<Tensor> in{fused};
      for (const Tensor& t : p.segmentation_parameters().tensors()) in.push_back(t);
      r.check("predict_mask", desc, [=] { return proj(predict_mask(fused, p)); }, in);
    }
    {
      Tensor v = random_tensor({b, c}, rng);
      auto proj = projector({b, c}, rng);
      std::vector<Tensor> in{v};
      for (const Tensor& t : p.projection_parameters().tensors()) in.push_back(t);
      r.check("project_correlation", desc, [=] { return proj(project_correlation(v, p)); }, in);
    }
    {
      Tensor gates = random_probabilities({b, c}, rng);
      auto proj = projector({b, c, h, w}, rng);
      r.check("refine", desc, [=] { return proj(refine(fused, gates)); }, {fused, gates});
    }
    {
      auto proj = projector({b, c, h, w}, rng);
      std::vector<Tensor> in{fused};
      for (const Tensor& t : p.parameters().tensors()) in.push_back(t);
      r.check("frm_forward", desc, [=] { return proj(frm_forward(fused, p).refined); }, in);
    }
  }
}

void losses_suite(Runner& r, Rng& rng, std::size_t n_shapes) {
  for (std::size_t s = 0; s < n_shapes; ++s) {
    const std::size_t b = pick(rng, 1, 3), h = pick(rng, 4, 8), w = pick(rng, 3, 8), c = pick(rng, 10, 16);
    const std::string desc = dims({b, h, w});
    const Tensor gt = random_binary({b, h, w}, rng);
    Tensor pred = random_probabilities({b, h, w}, rng);
    Tensor gates = random_probabilities({b, c}, rng);
    const double eps = rng.uniform(0.5, 1.5), alpha = rng.uniform(0.05, 0.5);
    r.check("bce_loss", desc, [=] { return bce_loss(gt, pred); }, {pred});
    r.check("dice_loss", desc, [=] { return dice_loss(gt, pred, eps); }, {pred});
    r.check("seg_loss", desc, [=] { return seg_loss(gt, pred, eps); }, {pred});
    r.check("neg_corr_loss", dims({b, c}), [=] { return neg_corr_loss(gates); }, {gates});
    r.check("corr_max_loss", desc, [=] { return corr_max_loss(gt, pred, gates, alpha, eps); }, {pred, gates});
    {
      const Shape sh{b, 4, h, w};
      Tensor p = random_tensor(sh, rng, 0.0, 3.0);
      std::vector<double> t(shape_numel(sh)), wt(shape_numel(sh));
      const auto pv = p.data();
      for (std::size_t i = 0; i < t.size(); ++i) {
        // keep |pred - target| away from the smooth-L1 knee at 1
        const double d = rng.bernoulli(0.5) ? rng.uniform(0.05, 0.9) : rng.uniform(1.1, 2.0);
        t[i] = pv[i] + (rng.bernoulli(0.5) ? d : -d);
        wt[i] = rng.bernoulli(0.5) ? rng.uniform(0.1, 1.0) : 0.0;
      }
      const Tensor target = Tensor::from(sh, std::move(t)), weight = Tensor::from(sh, std::move(wt));
      r.check("smooth_l1", dims(sh), [=] { return smooth_l1(p, target, weight); }, {p});
    }
  }
}

void full_suite(Runner& r, Rng& rng, std::size_t n_shapes) {
  const FfmVariant variants[] = {FfmVariant::adaptive_rp_globalcc, FfmVariant::adaptive_rp_convcc,
                                 FfmVariant::fixed_rp};
  for (std::size_t s = 0; s < n_shapes; ++s) {
    ExperimentConfig cfg;
    cfg.channels = 4 * pick(rng, 1, 3);
    cfg.ffm_variant = variants[s % 3];
    cfg.seed = rng.next_u64() >> 1;
    const std::size_t b = pick(rng, 1, 2);
    const auto data = generate_dataset(rng.next_u64() >> 1, b, Split::train);
    std::vector<std::size_t> idx(b);
    for (std::size_t i = 0; i < b; ++i) idx[i] = i;
    const Batch batch = make_batch(data, idx);
    DetectorParams p = DetectorParams::init(cfg);
    if (is_adaptive(cfg.ffm_variant)) {
      p.ffm.offset_kernel = random_tensor(p.ffm.offset_kernel.shape(), rng, -0.02, 0.02);
      p.ffm.offset_bias = generic_coords(p.ffm.offset_bias.shape(), rng, -1.0, 1.0);
    }
    const ParameterSet params = trainable_parameters(p, cfg);
    std::vector<Tensor> inputs;
    for (const auto& item : params.items()) {
      Tensor t = item.tensor;
      // Zero biases put rectifier inputs exactly on the kink wherever a
      // receptive field is all zero; small generic biases avoid that.
      if (item.name.ends_with("bias") && item.name != "ffm.offset_bias") {
        for (auto& v : t.mutable_data()) v = rng.uniform(0.02, 0.1) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
      }
      inputs.push_back(t);
    }
    const std::string desc = "b" + std::to_string(b) + " c" + std::to_string(cfg.channels) + " 64x64 -> 8x8 " +
                             to_string(cfg.ffm_variant);
    r.check("full_total_loss", desc,
            [=] { return compute_loss(detector_forward(p, cfg, batch), batch, cfg).total; }, inputs, kFullTol, 20,
            kFullMinGrad);
  }
}

}  // namespace

std::vector<std::string> grad_suite_names() { return {"ops", "ffm", "frm", "losses", "full"}; }

std::vector<GradCase> run_grad_suite(const std::string& suite, std::uint64_t seed, std::size_t n_shapes) {
  if (suite == "all") {
    std::vector<GradCase> all;
    for (const auto& name : grad_suite_names()) {
      auto part = run_grad_suite(name, seed, n_shapes);
      all.insert(all.end(), part.begin(), part.end());
    }
    return all;
  }
  Runner r{suite, seed, {}};
  Rng rng(derive_seed(seed, "grad_suite/" + suite));
  if (suite == "ops") {
    ops_suite(r, rng, n_shapes);
  } else if (suite == "ffm") {
    ffm_suite(r, rng, n_shapes);
  } else if (suite == "frm") {
    frm_suite(r, rng, n_shapes);
  } else if (suite == "losses") {
    losses_suite(r, rng, n_shapes);
  } else if (suite == "full") {
    full_suite(r, rng, n_shapes);
  } else {
    throw std::invalid_argument("unknown gradient suite '" + suite + "' (expected ops, ffm, frm, losses, full or all)");
  }
  return std::move(r.cases);
}

}  // namespace tfuse
