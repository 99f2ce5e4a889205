// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ctseq/models/latent_ode.hpp"
#include "ctseq/models/ode_rnn.hpp"

namespace ctseq::train {

using ad::Tensor;
using ad::Var;

enum class ModelKind { latent_ode, rnn_vae, ode_rnn, rnn_dt, rnn_decay, rnn_impute, gru_d };

std::string model_name(ModelKind k);
ModelKind parse_model(const std::string& name);
bool is_encoder_decoder(ModelKind k);

struct ModelConfig {
  ModelKind kind = ModelKind::latent_ode;
  /// Recognition network of latent_ode.
  models::EncoderKind encoder = models::EncoderKind::ode_rnn;
  std::size_t features = 1;
  std::size_t latent = 10;
  std::size_t rec_hidden = 20;
  /// Hidden width of every ODE function, posterior and output network.
  std::size_t units = 100;
  std::size_t gru_units = 100;
  std::size_t ode_layers = 1;
  std::size_t output_layers = 0;
  double obs_variance = 0.01;
  /// Link for sigma of z0, the decay rate and the Poisson intensity.
  ad::PositiveLink positive_link = ad::PositiveLink::softplus;
  bool poisson = false;
  std::size_t classes = 0;
  std::size_t point_classes = 0;
  ode::SolverConfig encoder_solver;
  ode::SolverConfig decoder_solver;
};

struct LossOptions {
  double kl_weight = 1.0;
  std::size_t n_samples = 3;
  double ce_weight = 0.0;
  double poisson_weight = 1.0;
  /// Probability of feeding a prediction instead of data during
  /// autoregressive extrapolation training.
  double sampling_prob = 0.5;
};

struct LossTerms {
  Var loss;
  double recon = 0.0;  // mean log-likelihood per series
  double kl = 0.0;
  double ce = 0.0;
  std::size_t nfe = 0;
};

struct Prediction {
  /// Per target grid index, [rows, features]. Zero where nothing is predicted.
  std::vector<Tensor> mean;
  /// [rows, classes] per-sequence logits when a classifier is present.
  std::optional<Tensor> logits;
  /// Per target grid index, [rows, point classes], when present.
  std::vector<Tensor> point_logits;
};

/// One of the encoder-decoder models or the autoregressive baselines
/// behind a common loss / predict interface.
class Model {
 public:
  Model() = default;
  /// `mean` is the empirical feature mean used by the imputing cells.
  static Model create(ad::ParameterStore& store, const ModelConfig& config, const Tensor& mean,
                      std::mt19937_64& rng);

  LossTerms loss(ad::Graph& g, const data::TaskBatch& batch, const LossOptions& opt,
                 std::mt19937_64& rng) const;
  Prediction predict(const ad::ParameterStore& store, const data::TaskBatch& batch) const;

  const ModelConfig& config() const { return cfg_; }
  const models::LatentModel* latent() const { return latent_ ? &*latent_ : nullptr; }
  const models::RecurrentModel* recurrent() const { return rec_ ? &*rec_ : nullptr; }

 private:
  models::RunInput recurrent_input(const data::TaskBatch& batch, std::vector<Tensor>& values,
                                   std::vector<Tensor>& mask,
                                   std::vector<Tensor>& present) const;

  ModelConfig cfg_;
  std::optional<models::LatentModel> latent_;
  std::optional<models::RecurrentModel> rec_;
  std::optional<models::SequenceClassifier> cls_;
  std::optional<models::PointClassifier> point_cls_;
};

}  // namespace ctseq::train
