// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ctseq/data/dataset.hpp"
#include "ctseq/ode/solver.hpp"
#include "ctseq/rnn/cells.hpp"

namespace ctseq::models {

using ad::Tensor;
using ad::Var;

/// How the hidden state behaves between observations and which inputs the
/// update sees.
enum class CellKind {
  ode_rnn,     // learned ODE between observations, GRU on [x; mask]
  rnn_dt,      // constant between observations, GRU on [x; mask; dt]
  rnn_decay,   // exponential decay between grid points, GRU on [x; mask]
  rnn_impute,  // constant, GRU on [imputed x; mask] at every point of the series
  gru_d,       // decay plus imputation
};

std::string cell_name(CellKind k);
CellKind parse_cell(const std::string& name);

enum class Direction { forward, backward };

struct RecurrentConfig {
  CellKind cell = CellKind::ode_rnn;
  std::size_t features = 1;
  std::size_t hidden = 20;
  std::size_t gru_units = 100;
  std::size_t ode_units = 100;
  std::size_t ode_layers = 1;
  /// Hidden layers of the output head; 0 means a single linear layer.
  std::size_t output_layers = 0;
  std::size_t output_units = 100;
  bool with_output = true;
  ode::SolverConfig solver;
  /// Empirical per-feature mean for the imputing cells ([1, features]).
  Tensor mean;
  ad::PositiveLink decay_link = ad::PositiveLink::softplus;
};

/// Inputs of one pass, all aligned on `times`. Per-time tensors are
/// [rows, features] (values, mask) and [rows, 1] (present).
struct RunInput {
  std::span<const double> times;
  std::span<const Tensor> values;
  std::span<const Tensor> mask;
  std::span<const Tensor> present;
  Direction direction = Direction::forward;
  /// Produce a state at every grid time, not only at update points.
  bool all_states = true;
  /// Continue the hidden state to this time after the last input.
  std::optional<double> end_time;
  /// Grid indices (in `times` order) from which inputs are the model's own
  /// predictions instead of data; npos disables feeding.
  std::size_t feed_from = static_cast<std::size_t>(-1);
  /// Per-time, per-row coins: 1 feeds the data value, 0 the prediction.
  /// Empty means always the prediction (pure autoregression).
  std::span<const Tensor> teacher;
};

struct RunOutput {
  /// Per grid index: state before (pre) and after (post) the update there.
  /// Invalid Vars where no state was produced.
  std::vector<Var> pre;
  std::vector<Var> post;
  /// Predictions made at fed grid indices (from the pre-update state).
  std::vector<Var> fed;
  Var final;
  std::size_t nfe = 0;
};

/// ODE-RNN and the RNN baselines: one recurrent state, one update cell,
/// one evolution rule between observations.
class RecurrentModel {
 public:
  RecurrentModel() = default;
  static RecurrentModel create(ad::ParameterStore& store, std::string_view prefix,
                               RecurrentConfig config, std::mt19937_64& rng);

  RunOutput run(ad::Graph& g, const RunInput& in) const;
  Var output(Var h) const { return out_(h); }

  const RecurrentConfig& config() const { return cfg_; }
  const rnn::GruParams& gru() const { return gru_; }
  const ode::OdeDynamics& dynamics() const { return dyn_; }
  const ad::Mlp& head() const { return out_; }
  std::size_t hidden() const { return cfg_.hidden; }

 private:
  Var evolve(ad::Graph& g, Var h, std::span<const double> ts, std::vector<Var>* states,
             std::size_t& nfe) const;

  RecurrentConfig cfg_;
  rnn::GruParams gru_;
  ode::OdeDynamics dyn_;
  rnn::DecayParams decay_;
  rnn::ImputeStats impute_;
  ad::Mlp out_;
};

/// Picks the true input where the coin is 1 and the prediction elsewhere,
/// per row. `coin` is [rows, 1].
Var scheduled_sampling_step(Var true_x, Var predicted_x, const Tensor& coin);

/// Draws per-row coins that feed data with probability 1 - p_predicted.
Tensor draw_teacher_coins(std::size_t rows, double p_predicted, std::mt19937_64& rng);

/// Runs the model over an observed prefix and keeps going at `future`
/// times, feeding each prediction back as a fully observed input.
std::vector<Tensor> autoregressive_extrapolate(const RecurrentModel& model,
                                               const ad::ParameterStore& store,
                                               const data::TimeSeries& prefix,
                                               std::span<const double> future);

/// Per-time linear classifier on hidden states.
struct PointClassifier {
  ad::Mlp net;
  static PointClassifier create(ad::ParameterStore& store, std::string_view prefix,
                                std::size_t hidden, std::size_t classes,
                                std::mt19937_64& rng);
  Var logits(Var h) const { return net(h); }
};

/// Per-sequence classifier: two ReLU layers on the final state.
struct SequenceClassifier {
  ad::Mlp net;
  static SequenceClassifier create(ad::ParameterStore& store, std::string_view prefix,
                                   std::size_t in, std::size_t units, std::size_t classes,
                                   std::mt19937_64& rng);
  Var logits(Var h) const { return net(h); }
};

/// Sum over rows with a label >= 0 of -log softmax(logits)[label].
/// Returns the number of labelled rows through `count`.
Var cross_entropy(Var logits, std::span<const int> labels, std::size_t* count = nullptr);

/// Masked Gaussian log-density summed over entries where mask is 1:
/// -0.5 * (x - mean)^2 / var - 0.5 * log(2 pi var). Masked-out targets never
/// reach the graph. Returns a [rows, 1] per-row sum.
Var masked_gaussian_loglik(Var mean, const Tensor& target, const Tensor& mask,
                           double variance);

/// Masked squared error totals over plain tensors.
struct SquaredError {
  double sum = 0.0;
  std::size_t count = 0;
  void add(const Tensor& pred, const Tensor& target, const Tensor& mask);
  double mse() const { return count ? sum / static_cast<double>(count) : 0.0; }
};

}  // namespace ctseq::models
