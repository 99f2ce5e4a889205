// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string_view>

#include "ctseq/autodiff/graph.hpp"
#include "ctseq/autodiff/mlp.hpp"
#include "ctseq/autodiff/params.hpp"

namespace ctseq::rnn {

using ad::ParamId;
using ad::Tensor;
using ad::Var;

/// Gated update of a [rows, hidden] state from a [rows, input] observation.
/// f_z and f_r end in a sigmoid, g in a tanh; each has one hidden layer.
struct GruParams {
  ad::Mlp f_z, f_r, g;
  std::size_t hidden = 0;
  std::size_t input = 0;

  static GruParams create(ad::ParameterStore& store, std::string_view prefix,
                          std::size_t hidden, std::size_t input, std::size_t units,
                          std::mt19937_64& rng);
};

/// Rows whose observed-row flag is 0 keep h_prev exactly. `observed` is a
/// [rows, 1] 0/1 tensor; usually row_observed(mask).
Var gru_update(const GruParams& p, Var h_prev, Var x, const Tensor& observed);

/// 1 for rows with at least one observed feature, else 0.
Tensor row_observed(const Tensor& mask);

/// Picks `next` on rows flagged 1 and `prev` elsewhere. Rows are copied
/// bit for bit; the all-0 and all-1 cases return an input unchanged.
Var select_rows(Var next, Var prev, const Tensor& flags);

/// Per-dimension decay rate, stored unconstrained: tau = softplus(raw).
/// A scalar rate is the one-column case broadcast over the state.
struct DecayParams {
  ParamId raw_tau;
  std::size_t dims = 0;
  ad::PositiveLink link = ad::PositiveLink::softplus;  // tau = link(raw_tau)

  static DecayParams create(ad::ParameterStore& store, std::string_view prefix,
                            std::size_t dims, double init_raw = 0.0,
                            ad::PositiveLink link = ad::PositiveLink::softplus);
};

/// h * exp(-tau * dt). `dt` is [rows, 1] (per-row gaps) or [1, 1].
Var decay_state(Var h, const Tensor& dt, const DecayParams& p);
Var decay_state(Var h, double dt, const DecayParams& p);

/// Empirical feature mean (training split) and a learned, unconstrained
/// mixing decay: gamma = exp(-softplus(raw_decay) * dt).
struct ImputeStats {
  Tensor mean;  // [1, features]
  ParamId raw_decay;

  static ImputeStats create(ad::ParameterStore& store, std::string_view prefix,
                            Tensor mean, double init_raw = 0.0);
};

/// Observed features pass through; missing ones become
/// gamma * last_obs + (1 - gamma) * mean. All of x, mask, last_obs and
/// dt_since are [rows, features].
Var impute(Var x, const Tensor& mask, const Tensor& last_obs, const Tensor& dt_since,
           const ImputeStats& stats);

/// Running per-feature record of the last observed value and the time it
/// was seen, for imputation and time-gap features. Values-only.
struct ObservationTracker {
  Tensor last;       // [rows, features], starts at the empirical mean
  Tensor last_time;  // [rows, features]
  bool started = false;

  ObservationTracker(std::size_t rows, const Tensor& mean, double t0);
  /// Time since each feature was last observed (since t0 before that).
  Tensor since(double t) const;
  void observe(const Tensor& values, const Tensor& mask, double t);
};

/// GRU over the augmented input [x; dt]; `p` must be built for input + 1.
Var rnn_delta_t_update(const GruParams& p, Var h_prev, Var x, const Tensor& dt,
                       const Tensor& observed);

}  // namespace ctseq::rnn
