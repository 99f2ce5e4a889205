// SPDX-License-Identifier: Apache-2.0
#include "ctseq/models/poisson.hpp"

#include <cmath>
#include <ostream>
#include <string>

namespace ctseq::models {

PoissonHead PoissonHead::create(ad::ParameterStore& store, std::string_view prefix,
                                std::size_t latent, std::size_t features, std::size_t units,
                                std::mt19937_64& rng, ad::PositiveLink link) {
  PoissonHead h;
  h.latent = latent;
  h.features = features;
  const std::string base(prefix);
  h.f_lambda = ode::OdeDynamics(
      ad::Mlp::create(store, base + ".ode", {ad::mlp_widths(latent, units, 1, latent)}, rng));
  ad::MlpSpec spec{{latent, units, features}};
  spec.output = ad::output_activation(link);
  h.g_lambda = ad::Mlp::create(store, base + ".intensity", spec, rng);
  return h;
}

ode::Dynamics augmented_dynamics(ode::Dynamics f, std::size_t z_dim, const PoissonHead& head) {
  // Copy the pieces the closure needs; the head must outlive the solve.
  const PoissonHead* hp = &head;
  return [f = std::move(f), z_dim, hp](Var s) {
    const std::size_t want = z_dim + hp->latent + hp->features;
    if (s.cols() != want) {
      throw ad::ShapeError("augmented dynamics: state has " + std::to_string(s.cols()) +
                           " columns, expected " + std::to_string(want));
    }
    const Var z = ad::slice(s, 1, 0, z_dim);
    const Var zl = ad::slice(s, 1, z_dim, hp->latent);
    return ad::concat({f(z), hp->f_lambda(zl), hp->g_lambda(zl)}, 1);
  };
}

Var augment_initial(Var z0, std::size_t features) {
  return ad::concat(
      {z0, ad::constant(z0.graph(), Tensor(ad::Shape{z0.rows(), features}))}, 1);
}

double poisson_log_likelihood(std::span<const double> event_intensities, double integral) {
  double ll = 0.0;
  for (double l : event_intensities) {
    if (!(l > 0.0)) {
      throw std::domain_error("poisson: intensity " + std::to_string(l) + " at an event");
    }
    ll += std::log(l);
  }
  return ll - integral;
}

Var poisson_loglik(std::span<const Var> lambda, std::span<const Tensor> mask,
                   Var integral_start, Var integral_end) {
  if (lambda.size() != mask.size()) {
    throw ad::ShapeError("poisson: " + std::to_string(lambda.size()) + " intensities for " +
                         std::to_string(mask.size()) + " masks");
  }
  ad::Graph& g = integral_end.graph();
  Var ll = -ad::sum(integral_end - integral_start, 1);
  for (std::size_t t = 0; t < lambda.size(); ++t) {
    bool any = false;
    for (double m : mask[t].data()) any |= m != 0.0;
    if (!any) continue;
    for (std::size_t i = 0; i < mask[t].size(); ++i) {
      if (mask[t][i] != 0.0 && !(lambda[t].value()[i] > 0.0)) {
        throw std::domain_error("poisson: non-positive intensity at an event");
      }
    }
    // log is only taken where events sit; elsewhere the input is 1.
    Tensor off = mask[t];
    for (double& m : off.data()) m = m != 0.0 ? 0.0 : 1.0;
    const Var safe = lambda[t] * ad::constant(g, mask[t]) + ad::constant(g, std::move(off));
    ll = ll + ad::sum(ad::log(safe), 1);
  }
  return ll;
}

void write_intensity_csv(std::ostream& out, std::span<const double> times,
                         std::span<const Tensor> lambda, std::span<const Tensor> integral,
                         std::size_t row) {
  out << "time,feature,lambda,integral\n";
  for (std::size_t t = 0; t < times.size(); ++t) {
    const std::size_t D = lambda[t].cols();
    for (std::size_t d = 0; d < D; ++d) {
      out << times[t] << ',' << d << ',' << lambda[t].at(row, d) << ','
          << integral[t].at(row, d) << '\n';
    }
  }
}

}  // namespace ctseq::models
