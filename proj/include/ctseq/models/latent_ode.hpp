// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <random>
#include <span>
#include <vector>

#include "ctseq/data/dataset.hpp"
#include "ctseq/models/ode_rnn.hpp"
#include "ctseq/models/poisson.hpp"

namespace ctseq::models {

enum class EncoderKind { ode_rnn, rnn };
enum class DecoderKind { ode, rnn };

struct LatentConfig {
  std::size_t features = 1;
  EncoderKind encoder = EncoderKind::ode_rnn;
  DecoderKind decoder = DecoderKind::ode;
  std::size_t latent = 10;
  std::size_t rec_hidden = 20;
  std::size_t rec_gru_units = 100;
  std::size_t rec_ode_units = 100;
  std::size_t rec_ode_layers = 1;
  std::size_t gen_ode_units = 100;
  std::size_t gen_ode_layers = 1;
  /// Hidden width of g_mu and g_sigma; 0 makes them linear.
  std::size_t posterior_units = 100;
  std::size_t output_units = 100;
  std::size_t output_layers = 0;
  std::size_t rnn_decoder_units = 100;
  double obs_variance = 0.01;
  /// Positivity of sigma and of the Poisson intensity.
  ad::PositiveLink positive_link = ad::PositiveLink::softplus;
  ode::SolverConfig encoder_solver;
  ode::SolverConfig decoder_solver;
  /// Poisson process over observation times.
  bool poisson = false;
  std::size_t poisson_latent = 10;
  std::size_t poisson_units = 100;
  /// Per-sequence classes (0: no classifier) and per-time classes.
  std::size_t classes = 0;
  std::size_t point_classes = 0;
  std::size_t classifier_units = 300;
};

struct PosteriorGaussian {
  Var mu;     // [rows, latent]
  Var sigma;  // [rows, latent], positive
};

struct DecodeOutput {
  std::vector<double> times;      // requested decode times
  std::vector<Var> mean;          // per time, [rows, features]
  std::vector<Var> latent;        // per time, [rows, latent] (ODE part only)
  std::vector<Var> intensity;     // per time lambda, [rows, features], when poisson
  std::vector<Var> integral;      // per time Lambda, [rows, features], when poisson
  std::size_t nfe = 0;
};

struct ElboTerms {
  Var loss;               // scalar to minimise
  double recon = 0.0;     // mean over samples and series of the summed log-likelihood
  double kl = 0.0;        // mean over series
  double poisson = 0.0;   // mean over samples and series
  double ce = 0.0;        // mean over labelled rows
  std::size_t nfe = 0;
};

struct ElboOptions {
  std::size_t n_samples = 3;
  double kl_weight = 1.0;
  double poisson_weight = 1.0;
  double ce_weight = 0.0;
  /// Fixed noise, [n_samples * rows, latent dims]; drawn from rng when unset.
  std::optional<Tensor> eps;
};

/// Encoder-decoder over irregular series: recognition RNN (ODE-RNN or
/// GRU with time gaps) to a diagonal Gaussian over z0, then an ODE or RNN
/// decoder from z0.
class LatentModel {
 public:
  LatentModel() = default;
  static LatentModel create(ad::ParameterStore& store, std::string_view prefix,
                            LatentConfig config, std::mt19937_64& rng);

  /// Interpolation runs the encoder backward to `anchor`; extrapolation runs
  /// it forward over times before the split, then on to the split time.
  PosteriorGaussian encode(ad::Graph& g, const data::Batch& cond, data::Task task,
                           double anchor, std::size_t* nfe = nullptr) const;

  /// Decodes from z0 given at `anchor`; for the Poisson model z0 also holds
  /// the intensity latent. If times.front() equals anchor the first output is
  /// computed from z0 itself.
  DecodeOutput decode(ad::Graph& g, Var z0, double anchor,
                      std::span<const double> times) const;

  ElboTerms elbo(ad::Graph& g, const data::TaskBatch& batch, const ElboOptions& opt,
                 std::mt19937_64& rng) const;

  /// Predicted means at the target grid times, decoding from mu.
  std::vector<Tensor> predict(const ad::ParameterStore& store,
                              const data::TaskBatch& batch) const;

  /// Per-series sum of log sigma of the posterior.
  std::vector<double> posterior_log_sigma(const ad::ParameterStore& store,
                                          const data::Batch& cond, data::Task task,
                                          double anchor) const;

  std::size_t z0_dims() const { return cfg_.latent + (cfg_.poisson ? cfg_.poisson_latent : 0); }
  const LatentConfig& config() const { return cfg_; }
  const RecurrentModel& encoder() const { return enc_; }
  const ad::Mlp& g_mu() const { return g_mu_; }
  const ad::Mlp& g_sigma() const { return g_sigma_; }
  const ode::OdeDynamics& dynamics() const { return dyn_; }
  const ad::Mlp& output_net() const { return out_; }
  const rnn::GruParams& decoder_gru() const { return dec_rnn_; }
  const std::optional<PoissonHead>& poisson() const { return poisson_; }
  const std::optional<SequenceClassifier>& classifier() const { return cls_; }
  const std::optional<PointClassifier>& point_classifier() const { return point_cls_; }

  /// Grid times the decoder is asked for: every grid time from the anchor on.
  static std::vector<double> decode_times(const data::Batch& target, double anchor);

 private:
  LatentConfig cfg_;
  RecurrentModel enc_;
  ad::Mlp g_mu_, g_sigma_;
  ode::OdeDynamics dyn_;
  ad::Mlp out_;
  rnn::GruParams dec_rnn_;
  std::optional<PoissonHead> poisson_;
  std::optional<SequenceClassifier> cls_;
  std::optional<PointClassifier> point_cls_;
};

/// z0 = mu + sigma * eps for eps ~ N(0, I), `n` samples per row stacked
/// sample-major to [n * rows, latent].
Var sample_z0(const PosteriorGaussian& q, std::size_t n, std::mt19937_64& rng);
Var sample_z0(const PosteriorGaussian& q, std::size_t n, const Tensor& eps);

/// Per-row KL(N(mu, sigma) || N(0, I)) = sum_d 0.5 (sigma^2 + mu^2 - 1 - 2 log sigma),
/// as [rows, 1].
Var kl_diag_gaussian(Var mu, Var sigma);
double kl_diag_gaussian(const Tensor& mu, const Tensor& sigma);

/// Repeats the rows of `v` n times, sample-major.
Var tile_rows(Var v, std::size_t n);
Tensor tile_rows(const Tensor& t, std::size_t n);

}  // namespace ctseq::models
