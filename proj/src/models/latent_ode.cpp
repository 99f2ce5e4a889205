// SPDX-License-Identifier: Apache-2.0
#include "ctseq/models/latent_ode.hpp"

#include <algorithm>
#include <cmath>

namespace ctseq::models {

namespace {

ad::Mlp posterior_net(ad::ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t units, std::size_t out, std::mt19937_64& rng) {
  if (units == 0) return ad::Mlp::create(store, name, {{in, out}}, rng);
  return ad::Mlp::create(store, name, {{in, units, out}}, rng);
}

Tensor ones_column(std::size_t rows) { return Tensor(ad::Shape{rows, 1}, 1.0); }

}  // namespace

Var tile_rows(Var v, std::size_t n) {
  if (n == 1) return v;
  std::vector<Var> parts(n, v);
  return ad::concat(parts, 0);
}

Tensor tile_rows(const Tensor& t, std::size_t n) {
  Tensor out(ad::Shape{t.rows() * n, t.cols()});
  for (std::size_t s = 0; s < n; ++s) {
    std::copy(t.data().begin(), t.data().end(), out.data().begin() + s * t.size());
  }
  return out;
}

Var sample_z0(const PosteriorGaussian& q, std::size_t n, const Tensor& eps) {
  if (eps.rows() != n * q.mu.rows() || eps.cols() != q.mu.cols()) {
    throw ad::ShapeError("sample_z0: noise " + ad::shape_string(eps.shape()) + " for " +
                         std::to_string(n) + " samples of " + ad::shape_string(q.mu.shape()));
  }
  ad::Graph& g = q.mu.graph();
  return tile_rows(q.mu, n) + tile_rows(q.sigma, n) * ad::constant(g, eps);
}

Var sample_z0(const PosteriorGaussian& q, std::size_t n, std::mt19937_64& rng) {
  Tensor eps(ad::Shape{n * q.mu.rows(), q.mu.cols()});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& e : eps.data()) e = normal(rng);
  return sample_z0(q, n, eps);
}

Var kl_diag_gaussian(Var mu, Var sigma) {
  if (mu.shape() != sigma.shape()) {
    throw ad::ShapeError("kl: mu " + ad::shape_string(mu.shape()) + " vs sigma " +
                         ad::shape_string(sigma.shape()));
  }
  for (double s : sigma.value().data()) {
    if (!(s > 0.0)) throw std::domain_error("kl: sigma must be positive");
  }
  ad::Graph& g = mu.graph();
  const Var inner = ad::square(sigma) + ad::square(mu) - ad::scale(ad::log(sigma), 2.0);
  const double shift = -0.5 * static_cast<double>(mu.cols());
  return ad::scale(ad::sum(inner, 1), 0.5) +
         ad::constant(g, Tensor(ad::Shape{mu.rows(), 1}, shift));
}

double kl_diag_gaussian(const Tensor& mu, const Tensor& sigma) {
  if (mu.size() != sigma.size()) throw ad::ShapeError("kl: mu and sigma sizes differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double s = sigma[i];
    if (!(s > 0.0)) throw std::domain_error("kl: sigma must be positive");
    kl += 0.5 * (s * s + mu[i] * mu[i] - 1.0 - 2.0 * std::log(s));
  }
  return kl;
}

LatentModel LatentModel::create(ad::ParameterStore& store, std::string_view prefix,
                                LatentConfig cfg, std::mt19937_64& rng) {
  LatentModel m;
  const std::string base(prefix);
  const std::size_t zdim = cfg.latent + (cfg.poisson ? cfg.poisson_latent : 0);

  RecurrentConfig rc;
  rc.cell = cfg.encoder == EncoderKind::ode_rnn ? CellKind::ode_rnn : CellKind::rnn_dt;
  rc.features = cfg.features;
  rc.hidden = cfg.rec_hidden;
  rc.gru_units = cfg.rec_gru_units;
  rc.ode_units = cfg.rec_ode_units;
  rc.ode_layers = cfg.rec_ode_layers;
  rc.with_output = false;
  rc.solver = cfg.encoder_solver;
  m.enc_ = RecurrentModel::create(store, base + ".encoder", rc, rng);
  m.g_mu_ = posterior_net(store, base + ".g_mu", cfg.rec_hidden, cfg.posterior_units, zdim, rng);
  m.g_sigma_ =
      posterior_net(store, base + ".g_sigma", cfg.rec_hidden, cfg.posterior_units, zdim, rng);

  if (cfg.decoder == DecoderKind::ode) {
    m.dyn_ = ode::OdeDynamics(ad::Mlp::create(
        store, base + ".dynamics",
        {ad::mlp_widths(cfg.latent, cfg.gen_ode_units, cfg.gen_ode_layers, cfg.latent)}, rng));
  } else {
    if (cfg.poisson) throw std::invalid_argument("latent model: poisson needs the ODE decoder");
    m.dec_rnn_ = rnn::GruParams::create(store, base + ".decoder", cfg.latent,
                                        cfg.features + 1, cfg.rnn_decoder_units, rng);
  }
  m.out_ = ad::Mlp::create(
      store, base + ".output",
      {ad::mlp_widths(cfg.latent, cfg.output_units, cfg.output_layers, cfg.features)}, rng);
  if (cfg.poisson) {
    m.poisson_ = PoissonHead::create(store, base + ".poisson", cfg.poisson_latent,
                                     cfg.features, cfg.poisson_units, rng, cfg.positive_link);
  }
  if (cfg.classes > 0) {
    m.cls_ = SequenceClassifier::create(store, base + ".classifier", zdim,
                                        cfg.classifier_units, cfg.classes, rng);
  }
  if (cfg.point_classes > 0) {
    m.point_cls_ = PointClassifier::create(store, base + ".point_classifier", cfg.latent,
                                           cfg.point_classes, rng);
  }
  m.cfg_ = std::move(cfg);
  return m;
}

PosteriorGaussian LatentModel::encode(ad::Graph& g, const data::Batch& cond, data::Task task,
                                      double anchor, std::size_t* nfe) const {
  if (cond.steps() == 0 || cond.rows == 0) throw std::invalid_argument("encode: empty series");
  RunInput in;
  in.times = cond.times;
  in.values = cond.values;
  in.mask = cond.mask;
  in.present = cond.present;
  in.all_states = false;
  in.direction = task == data::Task::interpolation ? Direction::backward : Direction::forward;
  if (cfg_.encoder == EncoderKind::ode_rnn) in.end_time = anchor;
  const RunOutput r = enc_.run(g, in);
  if (nfe) *nfe += r.nfe;
  return {g_mu_(r.final), ad::positive(g_sigma_(r.final), cfg_.positive_link)};
}

DecodeOutput LatentModel::decode(ad::Graph& /*g*/, Var z0, double anchor,
                                 std::span<const double> times) const {
  DecodeOutput out;
  out.times.assign(times.begin(), times.end());
  if (times.empty()) return out;
  if (z0.cols() != z0_dims()) {
    throw ad::ShapeError("decode: z0 " + ad::shape_string(z0.shape()) + " for " +
                         std::to_string(z0_dims()) + " latent dims");
  }
  const std::size_t L = cfg_.latent;

  if (cfg_.decoder == DecoderKind::rnn) {
    const std::size_t R = z0.rows();
    Var h = z0;
    Var prev = out_(h);
    double t_prev = anchor;
    for (double t : times) {
      if (t != t_prev) {
        const Tensor dt(ad::Shape{R, 1}, std::abs(t - t_prev));
        h = rnn::rnn_delta_t_update(dec_rnn_, h, prev, dt, ones_column(R));
        prev = out_(h);
        t_prev = t;
      }
      out.latent.push_back(h);
      out.mean.push_back(prev);
    }
    return out;
  }

  std::vector<double> ts;
  const bool prepend = anchor != times.front();
  if (prepend) ts.push_back(anchor);
  ts.insert(ts.end(), times.begin(), times.end());
  Var s0 = z0;
  ode::Dynamics f = dyn_.fn();
  if (poisson_) {
    s0 = augment_initial(z0, poisson_->features);
    f = augmented_dynamics(std::move(f), L, *poisson_);
  }
  ode::SolveResult r = ode::odesolve(f, s0, ts, cfg_.decoder_solver);
  out.nfe = r.nfe;
  for (std::size_t i = prepend ? 1 : 0; i < r.states.size(); ++i) {
    const Var s = r.states[i];
    const Var z = poisson_ ? ad::slice(s, 1, 0, L) : s;
    out.latent.push_back(z);
    out.mean.push_back(out_(z));
    if (poisson_) {
      out.intensity.push_back(poisson_->g_lambda(ad::slice(s, 1, L, poisson_->latent)));
      out.integral.push_back(ad::slice(s, 1, L + poisson_->latent, poisson_->features));
    }
  }
  return out;
}

std::vector<double> LatentModel::decode_times(const data::Batch& target, double anchor) {
  std::vector<double> out;
  for (std::size_t t = 0; t < target.steps(); ++t) {
    if (target.times[t] < anchor) continue;
    const auto& m = target.mask[t].data();
    if (std::any_of(m.begin(), m.end(), [](double v) { return v != 0.0; })) {
      out.push_back(target.times[t]);
    }
  }
  return out;
}

namespace {

std::vector<std::size_t> grid_indices(const data::Batch& b, std::span<const double> times) {
  std::vector<std::size_t> idx;
  for (double t : times) {
    idx.push_back(static_cast<std::size_t>(
        std::lower_bound(b.times.begin(), b.times.end(), t) - b.times.begin()));
  }
  return idx;
}

}  // namespace

ElboTerms LatentModel::elbo(ad::Graph& g, const data::TaskBatch& batch, const ElboOptions& opt,
                            std::mt19937_64& rng) const {
  if (opt.n_samples == 0) throw std::invalid_argument("elbo: need at least one sample");
  if (opt.kl_weight < 0.0 || opt.kl_weight > 1.0) {
    throw std::invalid_argument("elbo: kl weight must be in [0, 1]");
  }
  ElboTerms terms;
  const std::size_t S = opt.n_samples;
  const std::size_t B = batch.cond.rows;
  const PosteriorGaussian q = encode(g, batch.cond, batch.task, batch.anchor, &terms.nfe);
  const Var z0 = opt.eps ? sample_z0(q, S, *opt.eps) : sample_z0(q, S, rng);

  const std::vector<double> times = decode_times(batch.target, batch.anchor);
  const std::vector<std::size_t> idx = grid_indices(batch.target, times);
  const DecodeOutput dec = decode(g, z0, batch.anchor, times);
  terms.nfe += dec.nfe;

  const double per_sample = 1.0 / static_cast<double>(S * B);
  Var recon = ad::constant(g, Tensor(ad::Shape{S * B, 1}));
  std::vector<Tensor> masks;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const Tensor m = tile_rows(batch.target.mask[idx[i]], S);
    recon = recon + masked_gaussian_loglik(dec.mean[i], tile_rows(batch.target.values[idx[i]], S),
                                           m, cfg_.obs_variance);
    masks.push_back(m);
  }
  const Var recon_mean = ad::scale(ad::sum(recon), per_sample);
  const Var kl_mean = ad::scale(ad::sum(kl_diag_gaussian(q.mu, q.sigma)), 1.0 / B);
  Var loss = ad::scale(kl_mean, opt.kl_weight) - recon_mean;
  terms.recon = recon_mean.value().item();
  terms.kl = kl_mean.value().item();

  if (poisson_ && !times.empty() && opt.poisson_weight != 0.0) {
    const Var pll = poisson_loglik(dec.intensity, masks, dec.integral.front(),
                                   dec.integral.back());
    const Var pmean = ad::scale(ad::sum(pll), per_sample);
    terms.poisson = pmean.value().item();
    loss = loss - ad::scale(pmean, opt.poisson_weight);
  }
  if (opt.ce_weight != 0.0) {
    std::size_t labelled = 0;
    Var ce_total;
    if (cls_ && batch.target.has_labels()) {
      std::vector<int> labels;
      for (std::size_t s = 0; s < S; ++s) {
        labels.insert(labels.end(), batch.target.labels.begin(), batch.target.labels.end());
      }
      std::size_t n = 0;
      ce_total = cross_entropy(cls_->logits(z0), labels, &n);
      labelled += n;
    }
    if (point_cls_ && batch.target.has_point_labels()) {
      for (std::size_t i = 0; i < times.size(); ++i) {
        std::vector<int> labels;
        for (std::size_t s = 0; s < S; ++s) {
          const auto& pl = batch.target.point_labels[idx[i]];
          labels.insert(labels.end(), pl.begin(), pl.end());
        }
        std::size_t n = 0;
        const Var ce = cross_entropy(point_cls_->logits(dec.latent[i]), labels, &n);
        if (n == 0) continue;
        ce_total = ce_total.valid() ? ce_total + ce : ce;
        labelled += n;
      }
    }
    if (labelled > 0) {
      const Var ce_mean = ad::scale(ce_total, 1.0 / static_cast<double>(labelled));
      terms.ce = ce_mean.value().item();
      loss = loss + ad::scale(ce_mean, opt.ce_weight);
    }
  }
  terms.loss = loss;
  return terms;
}

std::vector<Tensor> LatentModel::predict(const ad::ParameterStore& store,
                                         const data::TaskBatch& batch) const {
  ad::Graph g(&store);
  const PosteriorGaussian q = encode(g, batch.cond, batch.task, batch.anchor);
  const std::vector<double> times = decode_times(batch.target, batch.anchor);
  const std::vector<std::size_t> idx = grid_indices(batch.target, times);
  const DecodeOutput dec = decode(g, q.mu, batch.anchor, times);
  std::vector<Tensor> preds(batch.target.steps(),
                            Tensor(ad::Shape{batch.target.rows, batch.target.features}));
  for (std::size_t i = 0; i < times.size(); ++i) preds[idx[i]] = dec.mean[i].value();
  return preds;
}

std::vector<double> LatentModel::posterior_log_sigma(const ad::ParameterStore& store,
                                                     const data::Batch& cond, data::Task task,
                                                     double anchor) const {
  ad::Graph g(&store);
  const PosteriorGaussian q = encode(g, cond, task, anchor);
  const Tensor& s = q.sigma.value();
  std::vector<double> out(s.rows(), 0.0);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    for (std::size_t c = 0; c < s.cols(); ++c) out[r] += std::log(s.at(r, c));
  }
  return out;
}

}  // namespace ctseq::models
