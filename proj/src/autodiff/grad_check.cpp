// SPDX-License-Identifier: Apache-2.0
#include "ctseq/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace ctseq::ad {

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

namespace {

void track(GradCheckReport& r, std::size_t index, double a, double n, double floor = 1e-8) {
  const double e = relative_error(a, n, floor);
  if (e > r.max_rel_error || index == 0) {
    r.max_rel_error = e;
    r.worst_index = index;
    r.worst_analytic = a;
    r.worst_numeric = n;
  }
}

}  // namespace

GradCheckReport grad_check_report(const LossBuilder& build, const Tensor& params,
                                  double eps) {
  const ParamId pid{0};
  auto eval = [&](const Tensor& p) {
    Graph g;
    Var v(&g, g.parameter(pid, p));
    return build(g, v).value().item();
  };

  Graph g;
  Var p(&g, g.parameter(pid, params));
  Var loss = build(g, p);
  const Tensor analytic = g.backward(loss.id()).at(pid);

  GradCheckReport report;
  Tensor probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = eval(probe);
    probe[i] = orig - eps;
    const double fm = eval(probe);
    probe[i] = orig;
    track(report, i, analytic[i], (fp - fm) / (2.0 * eps));
  }
  return report;
}

double grad_check(const LossBuilder& build, const Tensor& params, double eps) {
  return grad_check_report(build, params, eps).max_rel_error;
}

GradCheckReport grad_check_store(const StoreLossBuilder& build, ParameterStore& store,
                                 double eps, double floor) {
  Gradients analytic;
  {
    Graph g(&store);
    Var loss = build(g);
    analytic = g.backward(loss.id());
  }
  auto eval = [&] {
    Graph g(&store);
    return build(g).value().item();
  };

  GradCheckReport report;
  std::size_t flat = 0;
  for (ParamId id : store.ids()) {
    Tensor& t = store.value(id);
    const auto it = analytic.find(id);
    for (std::size_t i = 0; i < t.size(); ++i, ++flat) {
      const double orig = t[i];
      t[i] = orig + eps;
      const double fp = eval();
      t[i] = orig - eps;
      const double fm = eval();
      t[i] = orig;
      const double a = it == analytic.end() ? 0.0 : it->second[i];
      track(report, flat, a, (fp - fm) / (2.0 * eps), floor);
    }
  }
  return report;
}

}  // namespace ctseq::ad
