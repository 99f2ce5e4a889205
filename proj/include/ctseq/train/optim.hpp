// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>

#include "ctseq/autodiff/graph.hpp"
#include "ctseq/autodiff/params.hpp"

namespace ctseq::train {

using ad::Tensor;

struct AdamaxConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adamax: m <- b1 m + (1 - b1) g, u <- max(b2 u, |g|),
/// p <- p - lr / (1 - b1^t) * m / (u + eps).
class Adamax {
 public:
  explicit Adamax(AdamaxConfig config = {}) : cfg_(config) {}

  /// Applies one step with learning rate `lr` to every parameter that has a
  /// gradient. Parameters without one are left alone and keep their state.
  void step(ad::ParameterStore& store, const ad::Gradients& grads, double lr);
  void step(ad::ParameterStore& store, const ad::Gradients& grads) { step(store, grads, cfg_.lr); }

  std::size_t steps() const { return t_; }
  const Tensor* first_moment(ad::ParamId id) const;
  const Tensor* inf_norm(ad::ParamId id) const;
  const AdamaxConfig& config() const { return cfg_; }

 private:
  AdamaxConfig cfg_;
  std::size_t t_ = 0;
  std::map<ad::ParamId, Tensor> m_, u_;
};

/// 1 - coef^(epoch + 1).
double kl_anneal_weight(std::size_t epoch, double coef = 0.99);

}  // namespace ctseq::train
