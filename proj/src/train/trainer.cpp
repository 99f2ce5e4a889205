// SPDX-License-Identifier: Apache-2.0
#include "ctseq/train/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

namespace ctseq::train {

using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& k : v) s += (s.empty() ? "" : ", ") + k;
  return s;
}

void check_keys(const json& j, const std::vector<std::string>& valid, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, _] : j.items()) {
    if (std::find(valid.begin(), valid.end(), k) == valid.end()) {
      throw ConfigError(where + ": unknown key '" + k + "'; valid keys: " + join(valid));
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("key '" + std::string(key) + "' has the wrong type: " + j.at(key).dump());
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(out)) throw ConfigError("key '" + std::string(key) + "' must be finite");
  }
}

std::string require_string(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError("missing required key '" + std::string(key) + "'");
  std::string s;
  read(j, key, s);
  return s;
}

bool read_switch(const json& j, const char* key, bool dflt) {
  if (!j.contains(key)) return dflt;
  const json& v = j.at(key);
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (s == "on") return true;
    if (s == "off") return false;
  }
  throw ConfigError("key '" + std::string(key) + "' must be on|off or a boolean");
}

template <class F>
auto rethrow_as_config(F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::size_t max_label(const data::Dataset& ds, bool per_point) {
  int hi = -1;
  for (const auto& s : ds.series) {
    if (per_point) {
      for (int l : s.point_labels) hi = std::max(hi, l);
    } else if (s.label) {
      hi = std::max(hi, *s.label);
    }
  }
  return static_cast<std::size_t>(hi + 1);
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = {
      "model",          "encoder",       "task",           "observed_fraction",
      "split_time",     "poisson",       "epochs",         "batch_size",
      "seed",           "lr",            "lr_decay",       "kl_coef",
      "ce_weight",      "sampling_prob", "n_samples",      "poisson_weight",
      "train_fraction", "eval_every",    "latent",         "rec_hidden",
      "units",          "gru_units",     "ode_layers",     "output_layers",
      "obs_variance",   "features",      "classes",        "point_classes",
      "encoder_solver", "decoder_solver", "data",          "toy",
      "out_dir",        "positive_link"};
  return keys;
}

ode::SolverConfig parse_solver(const json& j) {
  check_keys(j, {"method", "rtol", "atol", "step", "max_steps"}, "solver");
  ode::SolverConfig s;
  std::string method = ode::method_name(s.method);
  read(j, "method", method);
  s.method = rethrow_as_config([&] { return ode::parse_method(method); });
  read(j, "rtol", s.rtol);
  read(j, "atol", s.atol);
  read(j, "step", s.initial_step);
  read(j, "max_steps", s.max_steps);
  rethrow_as_config([&] {
    s.validate();
    return 0;
  });
  return s;
}

json to_json(const ode::SolverConfig& s) {
  return {{"method", ode::method_name(s.method)},
          {"rtol", s.rtol},
          {"atol", s.atol},
          {"step", s.initial_step},
          {"max_steps", s.max_steps}};
}

RunConfig parse_run_config(const json& j) {
  check_keys(j, run_config_keys(), "run config");
  RunConfig c;
  c.model.kind = rethrow_as_config([&] { return parse_model(require_string(j, "model")); });
  c.task = rethrow_as_config([&] { return data::parse_task(require_string(j, "task")); });
  if (j.contains("encoder")) {
    std::string e;
    read(j, "encoder", e);
    if (e == "odernn" || e == "ode_rnn") {
      c.model.encoder = models::EncoderKind::ode_rnn;
    } else if (e == "rnn") {
      c.model.encoder = models::EncoderKind::rnn;
    } else {
      throw ConfigError("key 'encoder' must be odernn|rnn, got '" + e + "'");
    }
  }
  read(j, "observed_fraction", c.observed_fraction);
  read(j, "split_time", c.split_time);
  c.model.poisson = read_switch(j, "poisson", false);
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "seed", c.seed);
  read(j, "lr", c.lr);
  read(j, "lr_decay", c.lr_decay);
  read(j, "kl_coef", c.kl_coef);
  if (j.contains("ce_weight") && !j.at("ce_weight").is_null()) {
    double w = 0.0;
    read(j, "ce_weight", w);
    c.ce_weight = w;
  }
  read(j, "sampling_prob", c.sampling_prob);
  read(j, "n_samples", c.n_samples);
  read(j, "poisson_weight", c.poisson_weight);
  read(j, "train_fraction", c.train_fraction);
  read(j, "eval_every", c.eval_every);
  read(j, "latent", c.model.latent);
  read(j, "rec_hidden", c.model.rec_hidden);
  read(j, "units", c.model.units);
  read(j, "gru_units", c.model.gru_units);
  read(j, "ode_layers", c.model.ode_layers);
  read(j, "output_layers", c.model.output_layers);
  read(j, "obs_variance", c.model.obs_variance);
  if (j.contains("positive_link")) {
    std::string l;
    read(j, "positive_link", l);
    c.model.positive_link = rethrow_as_config([&] { return ad::parse_link(l); });
  }
  c.model.features = 0;
  read(j, "features", c.model.features);
  read(j, "classes", c.model.classes);
  read(j, "point_classes", c.model.point_classes);
  if (j.contains("encoder_solver")) c.model.encoder_solver = parse_solver(j.at("encoder_solver"));
  if (j.contains("decoder_solver")) c.model.decoder_solver = parse_solver(j.at("decoder_solver"));
  read(j, "data", c.data_path);
  if (j.contains("toy")) {
    const json& t = j.at("toy");
    check_keys(t, {"n", "points", "t_max", "noise_std", "seed", "shared_times", "freq_lo",
                   "freq_hi"},
               "toy");
    read(t, "n", c.toy.n);
    read(t, "points", c.toy.points);
    read(t, "t_max", c.toy.t_max);
    read(t, "noise_std", c.toy.noise_std);
    read(t, "seed", c.toy.seed);
    read(t, "shared_times", c.toy.shared_times);
    read(t, "freq_lo", c.toy.freq_lo);
    read(t, "freq_hi", c.toy.freq_hi);
  }
  read(j, "out_dir", c.out_dir);

  if (!(c.observed_fraction > 0.0 && c.observed_fraction <= 1.0)) {
    throw ConfigError("observed_fraction must be in (0, 1]");
  }
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (c.n_samples == 0) throw ConfigError("n_samples must be positive");
  if (c.eval_every == 0) throw ConfigError("eval_every must be positive");
  if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(c.model.obs_variance > 0.0)) throw ConfigError("obs_variance must be positive");
  if (!(c.kl_coef >= 0.0 && c.kl_coef < 1.0)) throw ConfigError("kl_coef must be in [0, 1)");
  if (!(c.sampling_prob >= 0.0 && c.sampling_prob <= 1.0)) {
    throw ConfigError("sampling_prob must be in [0, 1]");
  }
  if (c.model.poisson && !is_encoder_decoder(c.model.kind)) {
    throw ConfigError("poisson=on needs model latent_ode");
  }
  if (c.model.poisson && c.model.kind == ModelKind::rnn_vae) {
    throw ConfigError("poisson=on needs the ODE decoder (model latent_ode)");
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  json j = {
      {"model", model_name(c.model.kind)},
      {"encoder", c.model.encoder == models::EncoderKind::ode_rnn ? "odernn" : "rnn"},
      {"task", data::task_name(c.task)},
      {"observed_fraction", c.observed_fraction},
      {"split_time", c.split_time},
      {"poisson", c.model.poisson ? "on" : "off"},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"lr", c.lr},
      {"lr_decay", c.lr_decay},
      {"kl_coef", c.kl_coef},
      {"sampling_prob", c.sampling_prob},
      {"n_samples", c.n_samples},
      {"poisson_weight", c.poisson_weight},
      {"train_fraction", c.train_fraction},
      {"eval_every", c.eval_every},
      {"latent", c.model.latent},
      {"rec_hidden", c.model.rec_hidden},
      {"units", c.model.units},
      {"gru_units", c.model.gru_units},
      {"ode_layers", c.model.ode_layers},
      {"output_layers", c.model.output_layers},
      {"obs_variance", c.model.obs_variance},
      {"positive_link", ad::link_name(c.model.positive_link)},
      {"features", c.model.features},
      {"classes", c.model.classes},
      {"point_classes", c.model.point_classes},
      {"encoder_solver", to_json(c.model.encoder_solver)},
      {"decoder_solver", to_json(c.model.decoder_solver)},
      {"data", c.data_path},
      {"toy",
       {{"n", c.toy.n},
        {"points", c.toy.points},
        {"t_max", c.toy.t_max},
        {"noise_std", c.toy.noise_std},
        {"seed", c.toy.seed},
        {"shared_times", c.toy.shared_times},
        {"freq_lo", c.toy.freq_lo},
        {"freq_hi", c.toy.freq_hi}}},
      {"out_dir", c.out_dir}};
  j["ce_weight"] = c.ce_weight ? json(*c.ce_weight) : json(nullptr);
  return j;
}

data::Dataset load_or_generate(const RunConfig& cfg) {
  if (!cfg.data_path.empty()) return data::ingest_csv(cfg.data_path);
  return data::gen_toy(cfg.toy).dataset;
}

PreparedData prepare_data(const RunConfig& cfg, const data::Dataset& raw) {
  if (raw.empty()) throw data::DataError("prepare: empty dataset");
  PreparedData p;
  std::tie(p.t_min, p.t_max) = data::time_range(raw);
  const data::Dataset scaled = data::rescale_time(raw, p.t_min, p.t_max);
  std::tie(p.train, p.test) =
      data::train_test_split(scaled, cfg.train_fraction, data::derive_seed(cfg.seed, 5));
  p.mean = data::empirical_mean(p.train);
  p.classes = std::max(max_label(p.train, false), max_label(p.test, false));
  p.point_classes = std::max(max_label(p.train, true), max_label(p.test, true));
  return p;
}

ModelConfig resolved_model(const RunConfig& cfg, const PreparedData& data) {
  ModelConfig m = cfg.model;
  const std::size_t D = data.train.features();
  if (m.features != 0 && m.features != D) {
    throw ConfigError("features is " + std::to_string(m.features) + " but the data has " +
                      std::to_string(D));
  }
  m.features = D;
  if (m.classes == 0) m.classes = data.classes;
  if (m.point_classes == 0) m.point_classes = data.point_classes;
  return m;
}

void write_metrics_csv(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,train_loss,test_mse,kl_weight,lr\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.test_mse) << ','
        << fmt(e.kl_weight) << ',' << fmt(e.lr) << '\n';
  }
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double pos = 0, neg = 0;
  for (int l : labels) (l != 0 ? pos : neg) += 1.0;
  if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();
  double tp = 0, fp = 0, area = 0, prev_tpr = 0, prev_fpr = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] != 0 ? tp : fp) += 1.0;
      ++j;
    }
    const double tpr = tp / pos, fpr = fp / neg;
    area += 0.5 * (fpr - prev_fpr) * (tpr + prev_tpr);
    prev_tpr = tpr;
    prev_fpr = fpr;
    i = j;
  }
  return area;
}

std::uint64_t eval_seed(std::uint64_t run_seed, std::size_t i) {
  return data::derive_seed(run_seed, 7, i);
}

namespace {

data::TaskOptions task_options(const RunConfig& cfg) {
  data::TaskOptions o;
  o.task = cfg.task;
  o.observed_fraction = cfg.observed_fraction;
  o.split_time = cfg.split_time;
  o.timeline_start = 0.0;
  return o;
}

std::vector<double> log_softmax_row(const Tensor& logits, std::size_t r) {
  const std::size_t C = logits.cols();
  double hi = -INFINITY;
  for (std::size_t c = 0; c < C; ++c) hi = std::max(hi, logits.at(r, c));
  double z = 0.0;
  for (std::size_t c = 0; c < C; ++c) z += std::exp(logits.at(r, c) - hi);
  std::vector<double> out(C);
  for (std::size_t c = 0; c < C; ++c) out[c] = logits.at(r, c) - hi - std::log(z);
  return out;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

Metrics evaluate(const Model& model, const ad::ParameterStore& store, const data::Dataset& test,
                 const RunConfig& cfg) {
  Metrics m;
  models::SquaredError se;
  const data::TaskOptions opt = task_options(cfg);
  double ce_sum = 0.0;
  std::size_t ce_n = 0, correct = 0, scored = 0;
  std::vector<double> scores;
  std::vector<int> labels;
  std::size_t pt_correct = 0, pt_n = 0;

  for (std::size_t b = 0; b < test.size(); b += cfg.batch_size) {
    const std::size_t e = std::min(test.size(), b + cfg.batch_size);
    std::vector<data::TimeSeries> series(test.series.begin() + b, test.series.begin() + e);
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = b; i < e; ++i) seeds.push_back(eval_seed(cfg.seed, i));
    const data::TaskBatch tb = data::make_task_batch(series, opt, seeds);
    const Prediction p = model.predict(store, tb);
    for (std::size_t k = 0; k < tb.target.steps(); ++k) {
      se.add(p.mean[k], tb.target.values[k], tb.target.mask[k]);
      if (!p.point_logits.empty() && p.point_logits[k].size() > 0 && tb.target.has_point_labels()) {
        for (std::size_t r = 0; r < tb.target.rows; ++r) {
          const int l = tb.target.point_labels[k][r];
          if (l < 0) continue;
          pt_correct += static_cast<int>(argmax(log_softmax_row(p.point_logits[k], r))) == l;
          ++pt_n;
        }
      }
    }
    if (p.logits && tb.target.has_labels()) {
      for (std::size_t r = 0; r < tb.target.rows; ++r) {
        const int l = tb.target.labels[r];
        if (l < 0) continue;
        const std::vector<double> ls = log_softmax_row(*p.logits, r);
        ce_sum -= ls[static_cast<std::size_t>(l)];
        ++ce_n;
        correct += static_cast<int>(argmax(ls)) == l;
        ++scored;
        if (ls.size() == 2) {
          scores.push_back(std::exp(ls[1]));
          labels.push_back(l);
        }
      }
    }
  }
  m.mse = se.mse();
  m.count = se.count;
  if (ce_n > 0) {
    m.ce = ce_sum / static_cast<double>(ce_n);
    m.accuracy = static_cast<double>(correct) / static_cast<double>(scored);
    if (!scores.empty()) m.auc = roc_auc(scores, labels);
  }
  if (pt_n > 0) m.accuracy = static_cast<double>(pt_correct) / static_cast<double>(pt_n);
  return m;
}

TrainResult train(const RunConfig& cfg, const PreparedData& data, std::ostream* progress) {
  TrainResult res;
  const ModelConfig mc = resolved_model(cfg, data);
  std::mt19937_64 init(data::derive_seed(cfg.seed, 0));
  res.model = Model::create(res.store, mc, data.mean, init);
  res.best = res.store;
  res.best_mse = std::numeric_limits<double>::quiet_NaN();
  if (cfg.epochs == 0) return res;
  if (data.train.empty()) throw data::DataError("train: empty training split");

  RunConfig eval_cfg = cfg;
  eval_cfg.model = mc;
  Adamax opt(AdamaxConfig{cfg.lr});
  std::mt19937_64 noise(data::derive_seed(cfg.seed, 1));
  LossOptions lo;
  lo.n_samples = cfg.n_samples;
  lo.poisson_weight = cfg.poisson_weight;
  lo.sampling_prob = cfg.sampling_prob;
  const bool labelled = mc.classes > 0 || mc.point_classes > 0;
  lo.ce_weight = cfg.ce_weight.value_or(labelled ? 100.0 : 0.0);
  const data::TaskOptions topt = task_options(cfg);

  const std::size_t N = data.train.size();
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch));
    lo.kl_weight = kl_anneal_weight(epoch, cfg.kl_coef);
    std::mt19937_64 shuffle(data::derive_seed(cfg.seed, 2, epoch));
    for (std::size_t i = N; i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(shuffle)]);
    }
    const std::uint64_t epoch_seed = data::derive_seed(cfg.seed, 3, epoch);

    double loss_sum = 0.0;
    std::size_t rows = 0;
    for (std::size_t b = 0, batch = 0; b < N; b += cfg.batch_size, ++batch) {
      const std::size_t e = std::min(N, b + cfg.batch_size);
      std::vector<data::TimeSeries> series;
      std::vector<std::uint64_t> seeds;
      for (std::size_t i = b; i < e; ++i) {
        series.push_back(data.train.series[order[i]]);
        seeds.push_back(data::derive_seed(epoch_seed, order[i]));
      }
      const data::TaskBatch tb = data::make_task_batch(series, topt, seeds);
      ad::Graph g(&res.store);
      const LossTerms terms = res.model.loss(g, tb, lo, noise);
      const double v = terms.loss.value().item();
      if (!std::isfinite(v)) {
        throw TrainingError("non-finite loss " + fmt(v) + " at epoch " + std::to_string(epoch) +
                                ", batch " + std::to_string(batch),
                            epoch, batch);
      }
      opt.step(res.store, g.backward(terms.loss.id()), lr);
      loss_sum += v * static_cast<double>(series.size());
      rows += series.size();
    }

    EpochLog row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(rows);
    row.kl_weight = lo.kl_weight;
    row.lr = lr;
    row.test_mse = std::numeric_limits<double>::quiet_NaN();
    if (!data.test.empty() && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs)) {
      row.test_mse = evaluate(res.model, res.store, data.test, eval_cfg).mse;
      if (!(row.test_mse >= res.best_mse)) {
        res.best_mse = row.test_mse;
        res.best_epoch = epoch;
        res.best = res.store;
      }
    }
    res.log.push_back(row);
    if (progress) {
      *progress << "epoch " << epoch << " loss " << row.train_loss << " test_mse "
                << row.test_mse << " kl_weight " << row.kl_weight << std::endl;
    }
  }
  return res;
}

void save_run(const std::string& path, const ad::ParameterStore& store, const RunConfig& cfg,
              const PreparedData& data) {
  RunConfig c = cfg;
  c.model = resolved_model(cfg, data);
  json meta = {{"version", CTSEQ_VERSION},
               {"config", to_json(c)},
               {"mean", data.mean.data()},
               {"t_min", data.t_min},
               {"t_max", data.t_max}};
  ad::save_checkpoint(path, store, meta.dump());
}

LoadedRun load_run(const std::string& path) {
  const ad::Checkpoint ck = ad::read_checkpoint(path);
  json meta;
  try {
    meta = json::parse(ck.meta);
  } catch (const json::parse_error& e) {
    throw ad::CheckpointError(path + ": meta line is not a run description");
  }
  if (!meta.contains("config") || !meta.contains("mean")) {
    throw ad::CheckpointError(path + ": meta line is not a run description");
  }
  LoadedRun r;
  r.cfg = parse_run_config(meta.at("config"));
  const auto mean = meta.at("mean").get<std::vector<double>>();
  r.mean = Tensor(ad::Shape{1, mean.size()}, mean);
  r.t_min = meta.value("t_min", 0.0);
  r.t_max = meta.value("t_max", 1.0);
  std::mt19937_64 rng(0);
  r.model = Model::create(r.store, r.cfg.model, r.mean, rng);
  ad::load_into(ck, r.store);
  return r;
}

}  // namespace ctseq::train
