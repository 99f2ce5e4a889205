// SPDX-License-Identifier: Apache-2.0
#include "ctseq/train/optim.hpp"

#include <cmath>

namespace ctseq::train {

void Adamax::step(ad::ParameterStore& store, const ad::Gradients& grads, double lr) {
  ++t_;
  const double bias = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double rate = lr / bias;
  for (const auto& [id, g] : grads) {
    Tensor& p = store.value(id);
    if (g.shape() != p.shape()) {
      throw ad::ShapeError("adamax: gradient " + ad::shape_string(g.shape()) + " for " +
                           store.name(id) + " " + ad::shape_string(p.shape()));
    }
    auto [mit, fresh] = m_.try_emplace(id, p.shape(), 0.0);
    auto uit = u_.try_emplace(id, p.shape(), 0.0).first;
    (void)fresh;
    Tensor& m = mit->second;
    Tensor& u = uit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      u[i] = std::max(cfg_.beta2 * u[i], std::abs(g[i]));
      p[i] -= rate * m[i] / (u[i] + cfg_.eps);
    }
  }
}

const Tensor* Adamax::first_moment(ad::ParamId id) const {
  const auto it = m_.find(id);
  return it == m_.end() ? nullptr : &it->second;
}

const Tensor* Adamax::inf_norm(ad::ParamId id) const {
  const auto it = u_.find(id);
  return it == u_.end() ? nullptr : &it->second;
}

double kl_anneal_weight(std::size_t epoch, double coef) {
  return 1.0 - std::pow(coef, static_cast<double>(epoch + 1));
}

}  // namespace ctseq::train
