// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "ctseq/ode/solver.hpp"

namespace ctseq::models {

using ad::Tensor;
using ad::Var;

/// Intensity side of the augmented latent state [z; z_lambda; Lambda]:
/// z_lambda follows its own ODE and lambda = g_lambda(z_lambda) > 0.
struct PoissonHead {
  ode::OdeDynamics f_lambda;  // z_lambda -> dz_lambda/dt
  ad::Mlp g_lambda;           // z_lambda -> lambda, positive output
  std::size_t latent = 0;     // dim of z_lambda
  std::size_t features = 0;   // dim of lambda and Lambda

  static PoissonHead create(ad::ParameterStore& store, std::string_view prefix,
                            std::size_t latent, std::size_t features, std::size_t units,
                            std::mt19937_64& rng,
                            ad::PositiveLink link = ad::PositiveLink::softplus);
};

/// d/dt [z; z_lambda; Lambda] = [f(z); f_lambda(z_lambda); g_lambda(z_lambda)]
/// on a [rows, z_dim + latent + features] state.
ode::Dynamics augmented_dynamics(ode::Dynamics f, std::size_t z_dim, const PoissonHead& head);

/// Initial augmented state: z0 (which holds [z; z_lambda]) with Lambda = 0.
Var augment_initial(Var z0, std::size_t features);

/// sum_i log lambda(t_i) - (Lambda(t_end) - Lambda(t_start)). Throws when
/// an event intensity is not positive.
double poisson_log_likelihood(std::span<const double> event_intensities,
                              double integral);

/// Per-row version on the graph: events are the entries with mask 1, each
/// using its own feature's intensity. Returns [rows, 1].
Var poisson_loglik(std::span<const Var> lambda, std::span<const Tensor> mask,
                   Var integral_start, Var integral_end);

/// CSV `time,feature,lambda,integral` for one row of a decoded trajectory.
void write_intensity_csv(std::ostream& out, std::span<const double> times,
                         std::span<const Tensor> lambda, std::span<const Tensor> integral,
                         std::size_t row);

}  // namespace ctseq::models
