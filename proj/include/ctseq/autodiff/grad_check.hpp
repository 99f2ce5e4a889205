// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "ctseq/autodiff/graph.hpp"
#include "ctseq/autodiff/params.hpp"

namespace ctseq::ad {

/// Builds a scalar loss on `g` from the trainable leaf `p`.
using LossBuilder = std::function<Var(Graph& g, Var p)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares backward() against central differences (f(p+e)-f(p-e))/(2e),
/// elementwise. Relative error is |a-b| / max(|a|, |b|, 1e-8).
GradCheckReport grad_check_report(const LossBuilder& build, const Tensor& params,
                                  double eps = 1e-5);
double grad_check(const LossBuilder& build, const Tensor& params, double eps = 1e-5);

/// Same check over every element of every tensor in a store. `build` must
/// construct the loss on a graph bound to `store`. `floor` bounds the
/// denominator of the relative error from below; raise it for losses whose
/// rounding noise in the difference quotient exceeds 1e-8.
using StoreLossBuilder = std::function<Var(Graph& g)>;
GradCheckReport grad_check_store(const StoreLossBuilder& build, ParameterStore& store,
                                 double eps = 1e-5, double floor = 1e-8);

double relative_error(double a, double b, double floor = 1e-8);

}  // namespace ctseq::ad
