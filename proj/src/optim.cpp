#include "tfuse/optim.hpp"

#include <stdexcept>

namespace tfuse {

void Sgd::step(ParameterSet& params, double lr) {
  auto& items = params.items();
  for (const auto& p : items) {
    if (p.tensor.requires_grad() && !p.tensor.has_grad()) {
      throw std::logic_error("sgd: parameter '" + p.name + "' has no gradient");
    }
  }
  if (velocity_.size() != items.size()) {
    velocity_.assign(items.size(), {});
  }
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto& t = items[k].tensor;
    auto values = t.mutable_data();
    auto grad = t.grad();
    auto& v = velocity_[k];
    if (v.size() != values.size()) v.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      v[i] = momentum_ * v[i] + grad[i];
      values[i] -= lr * v[i];
    }
    t.zero_grad();
  }
}

void sgd_step(ParameterSet& params, double lr, double momentum) {
  Sgd opt(momentum);
  opt.step(params, lr);
}

}  // namespace tfuse
