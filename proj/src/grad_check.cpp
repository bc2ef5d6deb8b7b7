#include "tfuse/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tfuse/rng.hpp"

namespace tfuse {

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  for (auto& t : inputs) {
    if (!t.requires_grad()) {
      report.diagnostic = "input does not require grad";
      return report;
    }
    t.zero_grad();
  }

  Tensor out = f();
  out.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);  // input not reached: gradient is zero
    }
  }
  for (auto& t : inputs) t.zero_grad();

  Rng rng(options.seed);
  // Probes are distinct coordinates in a random order (partial Fisher-Yates).
  // Candidates are the coordinates with a resolvable gradient; with no
  // threshold that is every coordinate.
  auto candidates = [&](std::size_t k) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < analytic[k].size(); ++i) {
      if (options.min_abs_grad <= 0.0 || !(std::abs(analytic[k][i]) < options.min_abs_grad)) out.push_back(i);
    }
    return out;
  };
  auto draw = [&rng](std::vector<std::size_t> picks, std::size_t count) {
    const std::size_t n = picks.size();
    count = std::min(count, n);
    for (std::size_t i = 0; i < count; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n - 1)));
      std::swap(picks[i], picks[j]);
    }
    picks.resize(count);
    return picks;
  };
  // Each group is an ordered candidate list and a number of probes to take from it.
  struct Group {
    std::vector<std::pair<std::size_t, std::size_t>> order;
    std::size_t want;
  };
  std::vector<Group> groups;
  if (options.probe_budget > 0) {
    std::vector<std::pair<std::size_t, std::size_t>> pool;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      for (std::size_t i : candidates(k)) pool.emplace_back(k, i);
    }
    std::vector<std::size_t> flat(pool.size());
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = i;
    Group g{{}, options.probe_budget};
    for (std::size_t i : draw(std::move(flat), pool.size())) g.order.push_back(pool[i]);
    groups.push_back(std::move(g));
  } else {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      auto c = candidates(k);
      Group g{{}, options.n_probes};
      for (std::size_t idx : draw(std::move(c), analytic[k].size())) g.order.emplace_back(k, idx);
      groups.push_back(std::move(g));
    }
  }

  auto at = [&](std::size_t k, std::size_t idx, double delta) {
    auto values = inputs[k].mutable_data();
    const double saved = values[idx];
    values[idx] = saved + delta;
    const double v = f().item();
    values[idx] = saved;
    return v;
  };
  auto rel_err = [&](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), options.abs_floor});
  };
  // A kink at distance d in [0, h] from the coordinate shows up either in the
  // central difference (h vs h/2) or in the second difference, which scales
  // with h on smooth functions and stays ~constant across a kink.
  auto unstable = [&](std::size_t k, std::size_t idx, double up, double down, double numeric) {
    const double h = options.step;
    const double up2 = at(k, idx, 0.5 * h), down2 = at(k, idx, -0.5 * h), mid = at(k, idx, 0.0);
    if (rel_err(numeric, (up2 - down2) / h) > options.tol) return true;
    const double second = (up - 2.0 * mid + down) / h, second2 = 4.0 * (up2 - 2.0 * mid + down2) / h;
    return std::abs(second - second2) > options.tol * std::max({std::abs(numeric), options.abs_floor});
  };

  std::ostringstream diag;
  bool ok = true;
  for (const auto& g : groups) {
    std::size_t taken = 0;
    for (const auto& [k, idx] : g.order) {
      if (taken == g.want) break;
      const double up = at(k, idx, options.step), down = at(k, idx, -options.step);
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k][idx];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        ++taken;
        ++report.probes;
        ok = false;
        diag << "input " << k << " index " << idx << ": non-finite gradient (analytic " << a << ", numeric " << numeric
             << "); ";
        continue;
      }
      const double rel = rel_err(a, numeric);
      if (options.kink_screen && rel > options.tol && unstable(k, idx, up, down, numeric)) {
        ++report.skipped_kinks;
        continue;
      }
      ++taken;
      ++report.probes;
      if (rel > report.max_rel_err) report.max_rel_err = rel;
      if (rel > options.tol) {
        ok = false;
        diag << "input " << k << " index " << idx << ": analytic " << a << " numeric " << numeric << " rel " << rel
             << "; ";
      }
    }
  }
  report.pass = ok;
  report.diagnostic = diag.str();
  return report;
}

}  // namespace tfuse
