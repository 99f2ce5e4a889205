// SPDX-License-Identifier: Apache-2.0
#include "ctseq/train/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace ctseq::train {

std::string model_name(ModelKind k) {
  switch (k) {
    case ModelKind::latent_ode: return "latent_ode";
    case ModelKind::rnn_vae: return "rnn_vae";
    case ModelKind::ode_rnn: return "ode_rnn";
    case ModelKind::rnn_dt: return "rnn_dt";
    case ModelKind::rnn_decay: return "rnn_decay";
    case ModelKind::rnn_impute: return "rnn_impute";
    case ModelKind::gru_d: return "gru_d";
  }
  return "unknown";
}

ModelKind parse_model(const std::string& name) {
  for (ModelKind k : {ModelKind::latent_ode, ModelKind::rnn_vae, ModelKind::ode_rnn,
                      ModelKind::rnn_dt, ModelKind::rnn_decay, ModelKind::rnn_impute,
                      ModelKind::gru_d}) {
    if (name == model_name(k)) return k;
  }
  throw std::invalid_argument(
      "unknown model '" + name +
      "' (expected latent_ode|ode_rnn|rnn_dt|rnn_decay|gru_d|rnn_impute|rnn_vae)");
}

bool is_encoder_decoder(ModelKind k) {
  return k == ModelKind::latent_ode || k == ModelKind::rnn_vae;
}

namespace {

models::CellKind cell_of(ModelKind k) {
  switch (k) {
    case ModelKind::ode_rnn: return models::CellKind::ode_rnn;
    case ModelKind::rnn_dt: return models::CellKind::rnn_dt;
    case ModelKind::rnn_decay: return models::CellKind::rnn_decay;
    case ModelKind::rnn_impute: return models::CellKind::rnn_impute;
    case ModelKind::gru_d: return models::CellKind::gru_d;
    default: break;
  }
  throw std::logic_error("no recurrent cell for " + model_name(k));
}

bool any_set(const Tensor& t) {
  return std::any_of(t.data().begin(), t.data().end(), [](double v) { return v != 0.0; });
}

std::size_t first_at_or_after(const std::vector<double>& times, double t) {
  return static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), t) -
                                  times.begin());
}

}  // namespace

Model Model::create(ad::ParameterStore& store, const ModelConfig& cfg, const Tensor& mean,
                    std::mt19937_64& rng) {
  Model m;
  m.cfg_ = cfg;
  if (is_encoder_decoder(cfg.kind)) {
    models::LatentConfig lc;
    lc.features = cfg.features;
    lc.encoder = cfg.kind == ModelKind::rnn_vae ? models::EncoderKind::rnn : cfg.encoder;
    lc.decoder = cfg.kind == ModelKind::rnn_vae ? models::DecoderKind::rnn : models::DecoderKind::ode;
    lc.latent = cfg.latent;
    lc.rec_hidden = cfg.rec_hidden;
    lc.rec_gru_units = cfg.gru_units;
    lc.rec_ode_units = cfg.units;
    lc.rec_ode_layers = cfg.ode_layers;
    lc.gen_ode_units = cfg.units;
    lc.gen_ode_layers = cfg.ode_layers;
    lc.posterior_units = cfg.units;
    lc.output_units = cfg.units;
    lc.output_layers = cfg.output_layers;
    lc.rnn_decoder_units = cfg.gru_units;
    lc.obs_variance = cfg.obs_variance;
    lc.positive_link = cfg.positive_link;
    lc.encoder_solver = cfg.encoder_solver;
    lc.decoder_solver = cfg.decoder_solver;
    lc.poisson = cfg.poisson;
    lc.poisson_latent = cfg.latent;
    lc.poisson_units = cfg.units;
    lc.classes = cfg.classes;
    lc.point_classes = cfg.point_classes;
    m.latent_ = models::LatentModel::create(store, "model", lc, rng);
    return m;
  }
  if (cfg.poisson) {
    throw std::invalid_argument("model: the poisson term needs an encoder-decoder model");
  }
  models::RecurrentConfig rc;
  rc.cell = cell_of(cfg.kind);
  rc.features = cfg.features;
  rc.hidden = cfg.rec_hidden;
  rc.gru_units = cfg.gru_units;
  rc.ode_units = cfg.units;
  rc.ode_layers = cfg.ode_layers;
  rc.output_layers = cfg.output_layers;
  rc.output_units = cfg.units;
  rc.with_output = true;
  rc.solver = cfg.encoder_solver;
  rc.mean = mean;
  rc.decay_link = cfg.positive_link;
  m.rec_ = models::RecurrentModel::create(store, "model", rc, rng);
  if (cfg.classes > 0) {
    m.cls_ = models::SequenceClassifier::create(store, "model.classifier", cfg.rec_hidden, 300,
                                                cfg.classes, rng);
  }
  if (cfg.point_classes > 0) {
    m.point_cls_ = models::PointClassifier::create(store, "model.point_classifier",
                                                   cfg.rec_hidden, cfg.point_classes, rng);
  }
  return m;
}

models::RunInput Model::recurrent_input(const data::TaskBatch& batch, std::vector<Tensor>& values,
                                        std::vector<Tensor>& mask,
                                        std::vector<Tensor>& present) const {
  models::RunInput in;
  in.times = batch.cond.times;
  in.direction = models::Direction::forward;
  in.all_states = true;
  if (batch.task == data::Task::interpolation) {
    in.values = batch.cond.values;
    in.mask = batch.cond.mask;
    in.present = batch.cond.present;
    return in;
  }
  // Data before the split, the model's own predictions from there on.
  const std::size_t from = first_at_or_after(batch.cond.times, batch.split_time);
  values.clear();
  mask.clear();
  present.clear();
  for (std::size_t k = 0; k < batch.cond.steps(); ++k) {
    const data::Batch& src = k < from ? batch.cond : batch.target;
    values.push_back(src.values[k]);
    mask.push_back(src.mask[k]);
    present.push_back(src.present[k]);
  }
  in.values = values;
  in.mask = mask;
  in.present = present;
  in.feed_from = from;
  return in;
}

LossTerms Model::loss(ad::Graph& g, const data::TaskBatch& batch, const LossOptions& opt,
                      std::mt19937_64& rng) const {
  LossTerms terms;
  if (latent_) {
    models::ElboOptions eo;
    eo.n_samples = opt.n_samples;
    eo.kl_weight = opt.kl_weight;
    eo.poisson_weight = opt.poisson_weight;
    eo.ce_weight = opt.ce_weight;
    const models::ElboTerms e = latent_->elbo(g, batch, eo, rng);
    terms.loss = e.loss;
    terms.recon = e.recon;
    terms.kl = e.kl;
    terms.ce = e.ce;
    terms.nfe = e.nfe;
    return terms;
  }

  std::vector<Tensor> values, mask, present, coins;
  models::RunInput in = recurrent_input(batch, values, mask, present);
  const bool extrap = batch.task == data::Task::extrapolation;
  if (extrap && opt.sampling_prob < 1.0) {
    const std::size_t R = batch.cond.rows;
    coins.assign(batch.cond.steps(), Tensor(ad::Shape{R, 1}));
    for (std::size_t k = in.feed_from; k < coins.size(); ++k) {
      coins[k] = models::draw_teacher_coins(R, opt.sampling_prob, rng);
    }
    in.teacher = coins;
  }
  const models::RunOutput r = rec_->run(g, in);
  terms.nfe = r.nfe;

  const data::Batch& tgt = batch.target;
  const double var = cfg_.obs_variance;
  Var ll = ad::constant(g, Tensor(ad::Shape{tgt.rows, 1}));
  for (std::size_t k = 0; k < tgt.steps(); ++k) {
    if (!any_set(tgt.mask[k])) continue;
    const Var pred = extrap ? r.fed[k] : (r.post[k].valid() ? rec_->output(r.post[k]) : Var());
    if (!pred.valid()) continue;
    ll = ll + models::masked_gaussian_loglik(pred, tgt.values[k], tgt.mask[k], var);
  }
  const Var recon = ad::scale(ad::sum(ll), 1.0 / static_cast<double>(tgt.rows));
  terms.recon = recon.value().item();
  Var loss = -recon;

  if (opt.ce_weight != 0.0) {
    std::size_t labelled = 0;
    Var ce;
    if (cls_ && tgt.has_labels()) {
      ce = models::cross_entropy(cls_->logits(r.final), tgt.labels, &labelled);
    }
    if (point_cls_ && tgt.has_point_labels()) {
      for (std::size_t k = 0; k < tgt.steps(); ++k) {
        if (!r.post[k].valid()) continue;
        std::size_t n = 0;
        const Var c = models::cross_entropy(point_cls_->logits(r.post[k]), tgt.point_labels[k], &n);
        if (n == 0) continue;
        ce = ce.valid() ? ce + c : c;
        labelled += n;
      }
    }
    if (labelled > 0) {
      const Var ce_mean = ad::scale(ce, 1.0 / static_cast<double>(labelled));
      terms.ce = ce_mean.value().item();
      loss = loss + ad::scale(ce_mean, opt.ce_weight);
    }
  }
  terms.loss = loss;
  return terms;
}

Prediction Model::predict(const ad::ParameterStore& store, const data::TaskBatch& batch) const {
  Prediction p;
  const data::Batch& tgt = batch.target;
  p.mean.assign(tgt.steps(), Tensor(ad::Shape{tgt.rows, tgt.features}));
  ad::Graph g(&store);

  if (latent_) {
    const models::PosteriorGaussian q =
        latent_->encode(g, batch.cond, batch.task, batch.anchor);
    const std::vector<double> times = models::LatentModel::decode_times(tgt, batch.anchor);
    const models::DecodeOutput dec = latent_->decode(g, q.mu, batch.anchor, times);
    const auto& pc = latent_->point_classifier();
    if (pc) p.point_logits.assign(tgt.steps(), Tensor());
    for (std::size_t i = 0; i < times.size(); ++i) {
      const std::size_t k = first_at_or_after(tgt.times, times[i]);
      p.mean[k] = dec.mean[i].value();
      if (pc) p.point_logits[k] = pc->logits(dec.latent[i]).value();
    }
    if (latent_->classifier()) p.logits = latent_->classifier()->logits(q.mu).value();
    return p;
  }

  std::vector<Tensor> values, mask, present;
  const models::RunInput in = recurrent_input(batch, values, mask, present);
  const models::RunOutput r = rec_->run(g, in);
  const bool extrap = batch.task == data::Task::extrapolation;
  if (point_cls_) p.point_logits.assign(tgt.steps(), Tensor());
  for (std::size_t k = 0; k < tgt.steps(); ++k) {
    if (extrap) {
      if (k >= in.feed_from && r.fed[k].valid()) p.mean[k] = r.fed[k].value();
    } else if (r.post[k].valid()) {
      p.mean[k] = rec_->output(r.post[k]).value();
    }
    if (point_cls_ && r.post[k].valid()) p.point_logits[k] = point_cls_->logits(r.post[k]).value();
  }
  if (cls_) p.logits = cls_->logits(r.final).value();
  return p;
}

}  // namespace ctseq::train
