// SPDX-License-Identifier: Apache-2.0
#include "ctseq/rnn/cells.hpp"

#include <cmath>
#include <string>

namespace ctseq::rnn {

GruParams GruParams::create(ad::ParameterStore& store, std::string_view prefix,
                            std::size_t hidden, std::size_t input, std::size_t units,
                            std::mt19937_64& rng) {
  GruParams p;
  p.hidden = hidden;
  p.input = input;
  const std::string base(prefix);
  ad::MlpSpec gate{{hidden + input, units, hidden}};
  gate.output = ad::OutputActivation::sigmoid;
  p.f_z = ad::Mlp::create(store, base + ".update_gate", gate, rng);
  p.f_r = ad::Mlp::create(store, base + ".reset_gate", gate, rng);
  ad::MlpSpec cand{{hidden + input, units, hidden}};
  cand.output = ad::OutputActivation::tanh;
  p.g = ad::Mlp::create(store, base + ".new_state", cand, rng);
  return p;
}

Tensor row_observed(const Tensor& mask) {
  const std::size_t rows = mask.rows(), cols = mask.cols();
  Tensor out(ad::Shape{rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask.at(r, c) != 0.0) {
        out[r] = 1.0;
        break;
      }
    }
  }
  return out;
}

Var select_rows(Var next, Var prev, const Tensor& flags) {
  if (next.shape() != prev.shape()) {
    throw ad::ShapeError("select_rows: " + ad::shape_string(next.shape()) + " vs " +
                         ad::shape_string(prev.shape()));
  }
  if (flags.size() != next.rows()) {
    throw ad::ShapeError("select_rows: " + std::to_string(flags.size()) +
                         " flags for " + std::to_string(next.rows()) + " rows");
  }
  bool all = true, none = true;
  for (double f : flags.data()) {
    all &= f != 0.0;
    none &= f == 0.0;
  }
  if (all) return next;
  if (none) return prev;
  ad::Graph& g = next.graph();
  Tensor keep(ad::Shape{flags.size(), 1});
  for (std::size_t r = 0; r < flags.size(); ++r) keep[r] = flags[r] != 0.0 ? 0.0 : 1.0;
  Tensor take(ad::Shape{flags.size(), 1});
  for (std::size_t r = 0; r < flags.size(); ++r) take[r] = 1.0 - keep[r];
  return next * ad::constant(g, std::move(take)) + prev * ad::constant(g, std::move(keep));
}

Var gru_update(const GruParams& p, Var h_prev, Var x, const Tensor& observed) {
  if (h_prev.cols() != p.hidden || x.cols() != p.input || h_prev.rows() != x.rows()) {
    throw ad::ShapeError("gru_update: state " + ad::shape_string(h_prev.shape()) +
                         " and input " + ad::shape_string(x.shape()) +
                         " do not fit hidden " + std::to_string(p.hidden) + ", input " +
                         std::to_string(p.input));
  }
  bool none = true;
  for (double f : observed.data()) none &= f == 0.0;
  if (none) return h_prev;

  const Var hx = ad::concat({h_prev, x}, 1);
  const Var z = p.f_z(hx);
  const Var r = p.f_r(hx);
  const Var cand = p.g(ad::concat({r * h_prev, x}, 1));
  // (1 - z) * cand + z * h_prev
  const Var h = cand + z * (h_prev - cand);
  return select_rows(h, h_prev, observed);
}

DecayParams DecayParams::create(ad::ParameterStore& store, std::string_view prefix,
                                std::size_t dims, double init_raw, ad::PositiveLink link) {
  DecayParams p;
  p.dims = dims;
  p.link = link;
  p.raw_tau = store.add(std::string(prefix) + ".raw_tau", Tensor(ad::Shape{1, dims}, init_raw));
  return p;
}

Var decay_state(Var h, const Tensor& dt, const DecayParams& p) {
  if (p.dims != 1 && p.dims != h.cols()) {
    throw ad::ShapeError("decay_state: " + std::to_string(p.dims) +
                         " rates for state " + ad::shape_string(h.shape()));
  }
  bool zero = true;
  for (double v : dt.data()) {
    if (v < 0.0) throw std::invalid_argument("decay_state: negative time gap");
    zero &= v == 0.0;
  }
  if (zero) return h;
  ad::Graph& g = h.graph();
  const Var tau = ad::positive(ad::param(g, p.raw_tau), p.link);
  const Var rate = tau * ad::constant(g, dt.rank() == 2 ? dt : dt.reshaped({dt.size(), 1}));
  return h * ad::exp(-rate);
}

Var decay_state(Var h, double dt, const DecayParams& p) {
  return decay_state(h, Tensor(ad::Shape{1, 1}, dt), p);
}

ImputeStats ImputeStats::create(ad::ParameterStore& store, std::string_view prefix,
                                Tensor mean, double init_raw) {
  ImputeStats s;
  const std::size_t d = mean.size();
  s.mean = mean.reshaped({1, d});
  s.raw_decay =
      store.add(std::string(prefix) + ".raw_decay", Tensor(ad::Shape{1, d}, init_raw));
  return s;
}

Var impute(Var x, const Tensor& mask, const Tensor& last_obs, const Tensor& dt_since,
           const ImputeStats& stats) {
  if (mask.shape() != x.shape() || last_obs.shape() != x.shape() ||
      dt_since.shape() != x.shape()) {
    throw ad::ShapeError("impute: input " + ad::shape_string(x.shape()) + ", mask " +
                         ad::shape_string(mask.shape()) + ", last " +
                         ad::shape_string(last_obs.shape()) + ", gaps " +
                         ad::shape_string(dt_since.shape()));
  }
  bool full = true;
  for (double m : mask.data()) full &= m != 0.0;
  if (full) return x;

  ad::Graph& g = x.graph();
  const Var rate = ad::softplus(ad::param(g, stats.raw_decay));
  const Var gamma = ad::exp(-(rate * ad::constant(g, dt_since)));
  const Var mean = ad::constant(g, stats.mean);
  // gamma * last + (1 - gamma) * mean = mean + gamma * (last - mean)
  Tensor gap = last_obs;
  for (std::size_t i = 0; i < gap.size(); ++i) gap[i] -= stats.mean[i % stats.mean.size()];
  const Var fill = mean + gamma * ad::constant(g, std::move(gap));
  Tensor miss = mask;
  for (double& m : miss.data()) m = m != 0.0 ? 0.0 : 1.0;
  return x * ad::constant(g, mask) + fill * ad::constant(g, std::move(miss));
}

ObservationTracker::ObservationTracker(std::size_t rows, const Tensor& mean, double t0)
    : last(ad::Shape{rows, mean.size()}), last_time(ad::Shape{rows, mean.size()}, t0) {
  const std::size_t d = mean.size();
  for (std::size_t i = 0; i < last.size(); ++i) last[i] = mean[i % d];
}

Tensor ObservationTracker::since(double t) const {
  Tensor out = last_time;
  for (double& v : out.data()) v = std::abs(t - v);
  return out;
}

void ObservationTracker::observe(const Tensor& values, const Tensor& mask, double t) {
  for (std::size_t i = 0; i < last.size(); ++i) {
    if (mask[i] != 0.0) {
      last[i] = values[i];
      last_time[i] = t;
    }
  }
  started = true;
}

Var rnn_delta_t_update(const GruParams& p, Var h_prev, Var x, const Tensor& dt,
                       const Tensor& observed) {
  ad::Graph& g = x.graph();
  const Tensor gap = dt.size() == 1 && x.rows() != 1
                         ? Tensor(ad::Shape{x.rows(), 1}, dt[0])
                         : dt.reshaped({x.rows(), 1});
  return gru_update(p, h_prev, ad::concat({x, ad::constant(g, gap)}, 1), observed);
}

}  // namespace ctseq::rnn
