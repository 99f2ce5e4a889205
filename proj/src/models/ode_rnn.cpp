// SPDX-License-Identifier: Apache-2.0
#include "ctseq/models/ode_rnn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ctseq::models {

std::string cell_name(CellKind k) {
  switch (k) {
    case CellKind::ode_rnn: return "ode_rnn";
    case CellKind::rnn_dt: return "rnn_dt";
    case CellKind::rnn_decay: return "rnn_decay";
    case CellKind::rnn_impute: return "rnn_impute";
    case CellKind::gru_d: return "gru_d";
  }
  return "unknown";
}

CellKind parse_cell(const std::string& name) {
  if (name == "ode_rnn" || name == "odernn") return CellKind::ode_rnn;
  if (name == "rnn_dt" || name == "rnn") return CellKind::rnn_dt;
  if (name == "rnn_decay") return CellKind::rnn_decay;
  if (name == "rnn_impute") return CellKind::rnn_impute;
  if (name == "gru_d") return CellKind::gru_d;
  throw std::invalid_argument("unknown cell '" + name +
                              "' (expected ode_rnn|rnn_dt|rnn_decay|rnn_impute|gru_d)");
}

namespace {

bool imputing(CellKind k) { return k == CellKind::rnn_impute || k == CellKind::gru_d; }
bool decaying(CellKind k) { return k == CellKind::rnn_decay || k == CellKind::gru_d; }

bool any_set(const Tensor& t) {
  return std::any_of(t.data().begin(), t.data().end(), [](double v) { return v != 0.0; });
}

Tensor widen(const Tensor& flags, std::size_t cols) {
  Tensor out(ad::Shape{flags.size(), cols});
  for (std::size_t r = 0; r < flags.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = flags[r];
  }
  return out;
}

}  // namespace

RecurrentModel RecurrentModel::create(ad::ParameterStore& store, std::string_view prefix,
                                      RecurrentConfig cfg, std::mt19937_64& rng) {
  RecurrentModel m;
  const std::string base(prefix);
  const std::size_t in = 2 * cfg.features + (cfg.cell == CellKind::rnn_dt ? 1 : 0);
  m.gru_ = rnn::GruParams::create(store, base + ".gru", cfg.hidden, in, cfg.gru_units, rng);
  if (cfg.cell == CellKind::ode_rnn) {
    m.dyn_ = ode::OdeDynamics(ad::Mlp::create(
        store, base + ".ode",
        {ad::mlp_widths(cfg.hidden, cfg.ode_units, cfg.ode_layers, cfg.hidden)}, rng));
  }
  if (decaying(cfg.cell)) m.decay_ = rnn::DecayParams::create(store, base + ".decay", cfg.hidden, 0.0, cfg.decay_link);
  if (imputing(cfg.cell)) {
    Tensor mean = cfg.mean.size() == cfg.features ? cfg.mean
                                                  : Tensor(ad::Shape{1, cfg.features});
    m.impute_ = rnn::ImputeStats::create(store, base + ".impute", std::move(mean));
  }
  if (cfg.with_output) {
    m.out_ = ad::Mlp::create(
        store, base + ".output",
        {ad::mlp_widths(cfg.hidden, cfg.output_units, cfg.output_layers, cfg.features)}, rng);
  }
  m.cfg_ = std::move(cfg);
  return m;
}

Var RecurrentModel::evolve(ad::Graph& g, Var h, std::span<const double> ts,
                           std::vector<Var>* states, std::size_t& nfe) const {
  (void)g;
  if (states) states->clear();
  if (ts.size() < 2) {
    if (states) states->push_back(h);
    return h;
  }
  switch (cfg_.cell) {
    case CellKind::ode_rnn: {
      ode::SolveResult r = ode::odesolve(dyn_.fn(), h, ts, cfg_.solver);
      nfe += r.nfe;
      Var last = r.states.back();
      if (states) *states = std::move(r.states);
      return last;
    }
    case CellKind::rnn_decay:
    case CellKind::gru_d: {
      Var last = h;
      if (states) states->push_back(h);
      for (std::size_t i = 1; i < ts.size(); ++i) {
        last = rnn::decay_state(h, std::abs(ts[i] - ts[0]), decay_);
        if (states) states->push_back(last);
      }
      return last;
    }
    case CellKind::rnn_dt:
    case CellKind::rnn_impute:
      if (states) states->assign(ts.size(), h);
      return h;
  }
  return h;
}

RunOutput RecurrentModel::run(ad::Graph& g, const RunInput& in) const {
  const std::size_t T = in.times.size();
  if (T == 0) throw std::invalid_argument("recurrent model: empty series");
  if (in.values.size() != T || in.mask.size() != T || in.present.size() != T) {
    throw ad::ShapeError("recurrent model: per-time inputs must match the grid");
  }
  const bool feeding = in.feed_from < T;
  if (feeding && in.direction != Direction::forward) {
    throw std::invalid_argument("recurrent model: feeding predictions needs forward time");
  }
  if (feeding && !cfg_.with_output) {
    throw std::invalid_argument("recurrent model: feeding predictions needs an output head");
  }
  const std::size_t R = in.values[0].rows();
  const std::size_t D = cfg_.features;

  std::vector<std::size_t> order(T);
  for (std::size_t i = 0; i < T; ++i) {
    order[i] = in.direction == Direction::forward ? i : T - 1 - i;
  }
  RunOutput out;
  out.pre.assign(T, Var());
  out.post.assign(T, Var());
  out.fed.assign(T, Var());

  const double t_start = in.times[order[0]];
  Var h = ad::constant(g, Tensor(ad::Shape{R, cfg_.hidden}));
  double t_prev = t_start;
  std::vector<std::size_t> pending;
  std::vector<double> last_update(R, t_start);
  std::optional<rnn::ObservationTracker> tracker;
  if (imputing(cfg_.cell)) tracker.emplace(R, impute_.mean, t_start);

  std::vector<double> ts;
  std::vector<std::size_t> slot;
  std::vector<Var> states;
  auto flush = [&](double t_to, bool include_to) {
    // A pending point can sit at t_prev itself (the first grid time).
    ts.assign(1, t_prev);
    slot.clear();
    for (std::size_t k : pending) {
      if (in.times[k] != ts.back()) ts.push_back(in.times[k]);
      slot.push_back(ts.size() - 1);
    }
    if (include_to && t_to != ts.back()) ts.push_back(t_to);
    const Var end = evolve(g, h, ts, &states, out.nfe);
    for (std::size_t j = 0; j < pending.size(); ++j) {
      out.pre[pending[j]] = states[slot[j]];
      out.post[pending[j]] = states[slot[j]];
    }
    pending.clear();
    return end;
  };

  for (std::size_t k : order) {
    const double t = in.times[k];
    const bool fed = feeding && k >= in.feed_from;
    const Tensor obs = (fed || imputing(cfg_.cell)) ? in.present[k] : rnn::row_observed(in.mask[k]);
    if (!any_set(obs)) {
      if (in.all_states) pending.push_back(k);
      continue;
    }
    const Var h_pre = flush(t, true);

    // Masked-out entries never reach the graph, whatever they hold.
    Tensor m = in.mask[k];
    Tensor xv = in.values[k];
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (m[i] == 0.0) xv[i] = 0.0;
    }
    Var x = ad::constant(g, std::move(xv));
    if (fed) {
      const Var pred = out_(h_pre);
      out.fed[k] = pred;
      x = in.teacher.empty() ? pred : scheduled_sampling_step(x, pred, in.teacher[k]);
      m = widen(in.present[k], D);
    }
    Var h_new;
    switch (cfg_.cell) {
      case CellKind::ode_rnn:
      case CellKind::rnn_decay:
        h_new = rnn::gru_update(gru_, h_pre, ad::concat({x, ad::constant(g, m)}, 1), obs);
        break;
      case CellKind::rnn_dt: {
        Tensor dt(ad::Shape{R, 1});
        for (std::size_t r = 0; r < R; ++r) dt[r] = std::abs(t - last_update[r]);
        h_new = rnn::rnn_delta_t_update(gru_, h_pre, ad::concat({x, ad::constant(g, m)}, 1),
                                        dt, obs);
        for (std::size_t r = 0; r < R; ++r) {
          if (obs[r] != 0.0) last_update[r] = t;
        }
        break;
      }
      case CellKind::rnn_impute:
      case CellKind::gru_d: {
        const Var xi = rnn::impute(x, m, tracker->last, tracker->since(t), impute_);
        h_new = rnn::gru_update(gru_, h_pre, ad::concat({xi, ad::constant(g, m)}, 1), obs);
        tracker->observe(x.value(), m, t);
        break;
      }
    }
    out.pre[k] = h_pre;
    out.post[k] = h_new;
    h = h_new;
    t_prev = t;
  }

  if (in.end_time) {
    h = flush(*in.end_time, true);
  } else if (!pending.empty()) {
    flush(t_prev, false);
  }
  out.final = h;
  return out;
}

Var scheduled_sampling_step(Var true_x, Var predicted_x, const Tensor& coin) {
  return rnn::select_rows(true_x, predicted_x, coin);
}

Tensor draw_teacher_coins(std::size_t rows, double p_predicted, std::mt19937_64& rng) {
  std::bernoulli_distribution predicted(std::clamp(p_predicted, 0.0, 1.0));
  Tensor coins(ad::Shape{rows, 1});
  for (double& c : coins.data()) c = predicted(rng) ? 0.0 : 1.0;
  return coins;
}

std::vector<Tensor> autoregressive_extrapolate(const RecurrentModel& model,
                                               const ad::ParameterStore& store,
                                               const data::TimeSeries& prefix,
                                               std::span<const double> future) {
  if (future.empty()) return {};
  if (prefix.length() == 0) throw std::invalid_argument("extrapolate: empty prefix");
  if (!(future.front() > prefix.times.back())) {
    throw std::invalid_argument("extrapolate: future times must follow the prefix");
  }
  const std::size_t D = model.config().features;
  std::vector<double> times = prefix.times;
  times.insert(times.end(), future.begin(), future.end());
  std::vector<Tensor> values, mask, present;
  for (std::size_t t = 0; t < times.size(); ++t) {
    Tensor v(ad::Shape{1, D}), m(ad::Shape{1, D});
    if (t < prefix.length()) {
      for (std::size_t f = 0; f < D; ++f) {
        v[f] = prefix.values.at(t, f);
        m[f] = prefix.mask.at(t, f);
      }
    }
    values.push_back(std::move(v));
    mask.push_back(std::move(m));
    present.emplace_back(ad::Shape{1, 1}, 1.0);
  }
  ad::Graph g(&store);
  RunInput in;
  in.times = times;
  in.values = values;
  in.mask = mask;
  in.present = present;
  in.all_states = false;
  in.feed_from = prefix.length();
  const RunOutput r = model.run(g, in);
  std::vector<Tensor> preds;
  for (std::size_t t = prefix.length(); t < times.size(); ++t) preds.push_back(r.fed[t].value());
  return preds;
}

PointClassifier PointClassifier::create(ad::ParameterStore& store, std::string_view prefix,
                                        std::size_t hidden, std::size_t classes,
                                        std::mt19937_64& rng) {
  return {ad::Mlp::create(store, prefix, {{hidden, classes}}, rng)};
}

SequenceClassifier SequenceClassifier::create(ad::ParameterStore& store,
                                              std::string_view prefix, std::size_t in,
                                              std::size_t units, std::size_t classes,
                                              std::mt19937_64& rng) {
  ad::MlpSpec spec{{in, units, units, classes}};
  spec.hidden = ad::Activation::relu;
  return {ad::Mlp::create(store, prefix, spec, rng)};
}

Var cross_entropy(Var logits, std::span<const int> labels, std::size_t* count) {
  if (labels.size() != logits.rows()) {
    throw ad::ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + ad::shape_string(logits.shape()));
  }
  const std::size_t C = logits.cols();
  Tensor onehot(ad::Shape{logits.rows(), C});
  std::size_t n = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0) continue;
    if (static_cast<std::size_t>(labels[r]) >= C) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[r]) +
                                  " outside " + std::to_string(C) + " classes");
    }
    onehot.at(r, static_cast<std::size_t>(labels[r])) = 1.0;
    ++n;
  }
  if (count) *count = n;
  ad::Graph& g = logits.graph();
  return -ad::sum(ad::log_softmax(logits) * ad::constant(g, std::move(onehot)));
}

Var masked_gaussian_loglik(Var mean, const Tensor& target, const Tensor& mask,
                           double variance) {
  if (mean.shape() != target.shape() || mask.shape() != target.shape()) {
    throw ad::ShapeError("gaussian loglik: mean " + ad::shape_string(mean.shape()) +
                         ", target " + ad::shape_string(target.shape()) + ", mask " +
                         ad::shape_string(mask.shape()));
  }
  if (!(variance > 0.0)) throw std::invalid_argument("gaussian loglik: variance must be > 0");
  ad::Graph& g = mean.graph();
  const std::size_t R = mean.rows(), C = mean.cols();
  Tensor clean(target.shape());
  Tensor counts(ad::Shape{R, 1});
  bool any = false;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (mask[i] != 0.0) {
      clean[i] = target[i];
      counts[i / C] += 1.0;
      any = true;
    }
  }
  if (!any) return ad::constant(g, Tensor(ad::Shape{R, 1}));
  const double norm = -0.5 * std::log(2.0 * std::numbers::pi * variance);
  for (double& c : counts.data()) c *= norm;
  const Var sq = ad::square(mean - ad::constant(g, std::move(clean))) * ad::constant(g, mask);
  return ad::scale(ad::sum(sq, 1), -0.5 / variance) + ad::constant(g, std::move(counts));
}

void SquaredError::add(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double d = pred[i] - target[i];
    sum += d * d;
    ++count;
  }
}

}  // namespace ctseq::models
