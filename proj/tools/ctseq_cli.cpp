// SPDX-License-Identifier: Apache-2.0
// ctseq: data generation, training, evaluation and desk-scale studies.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ctseq/train/toy_table.hpp"

namespace fs = std::filesystem;
using namespace ctseq;
using nlohmann::json;
using ad::Tensor;
using ad::Var;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int verbosity() {
  const char* v = std::getenv("CTSEQ_LOG");
  if (!v) return 1;
  const std::string s(v);
  if (s == "quiet" || s == "0") return 0;
  if (s == "debug" || s == "2") return 2;
  return 1;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_manifest(const fs::path& path, const std::string& command, const json& config,
                    std::uint64_t seed, json extra = json::object()) {
  json m = {{"command", command},
            {"version", CTSEQ_VERSION},
            {"seed", seed},
            {"config", config}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  open_out(path) << m.dump(2) << '\n';
}

json metrics_json(const train::Metrics& m) {
  json j = {{"mse", m.mse}, {"count", m.count}};
  if (m.ce) j["ce"] = *m.ce;
  if (m.accuracy) j["accuracy"] = *m.accuracy;
  if (m.auc) j["auc"] = *m.auc;
  return j;
}

// gen-data ------------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::size_t n = 1000;
  std::size_t points = 100;
  double noise_std = 0.1;
  double t_max = 5.0;
  bool shared_times = false;
  std::uint64_t seed = 0;
};

int cmd_gen_data(const GenArgs& a) {
  if (a.n == 0) throw UsageError("--n must be positive");
  if (a.points == 0) throw UsageError("--points must be positive");
  data::ToyConfig tc;
  tc.n = a.n;
  tc.points = a.points;
  tc.noise_std = a.noise_std;
  tc.t_max = a.t_max;
  tc.shared_times = a.shared_times;
  tc.seed = a.seed;
  const data::ToyData toy = data::gen_toy(tc);
  {
    std::ofstream out = open_out(a.out);
    data::export_csv(out, toy.dataset);
    if (!out) throw std::runtime_error("write failed: " + a.out);
  }
  const json cfg = {{"n", tc.n},
                    {"points", tc.points},
                    {"t_min", tc.t_min},
                    {"t_max", tc.t_max},
                    {"freq", {tc.freq_lo, tc.freq_hi}},
                    {"y0", {tc.y0_mean, tc.y0_std}},
                    {"noise_std", tc.noise_std},
                    {"shared_times", tc.shared_times}};
  write_manifest(a.out + ".manifest.json", "gen-data", cfg, a.seed,
                 {{"series", toy.dataset.size()}, {"output", a.out}});
  return 0;
}

// train ---------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out_dir;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  train::RunConfig cfg = train::load_run_config(a.config);
  if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.seed) cfg.seed = *a.seed;
  if (cfg.out_dir.empty()) throw UsageError("no output directory (set out_dir or --out-dir)");
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);

  const data::Dataset raw = train::load_or_generate(cfg);
  const train::PreparedData prepared = train::prepare_data(cfg, raw);
  std::ostream* progress = verbosity() > 0 ? &std::cerr : nullptr;
  const train::TrainResult r = train::train(cfg, prepared, progress);

  {
    std::ofstream m = open_out(dir / "metrics.csv");
    train::write_metrics_csv(m, r.log);
  }
  train::save_run((dir / "model.ckpt").string(), r.store, cfg, prepared);
  train::save_run((dir / "best.ckpt").string(), r.best, cfg, prepared);
  train::RunConfig resolved = cfg;
  resolved.model = train::resolved_model(cfg, prepared);
  json extra = {{"train_series", prepared.train.size()},
                {"test_series", prepared.test.size()},
                {"time_range", {prepared.t_min, prepared.t_max}},
                {"best_epoch", r.best_epoch},
                {"parameters", r.store.total_elements()}};
  if (!r.log.empty()) extra["final_test_mse"] = r.log.back().test_mse;
  write_manifest(dir / "manifest.json", "train", train::to_json(resolved), cfg.seed, extra);
  return 0;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string task;
  std::optional<double> fraction;
  std::optional<std::uint64_t> seed;
  std::string out;
};

data::Dataset load_for(const train::LoadedRun& run, const std::string& path) {
  data::Dataset ds = data::ingest_csv(path);
  if (ds.empty()) throw std::runtime_error(path + ": no series");
  if (ds.features() != run.cfg.model.features) {
    throw std::runtime_error("checkpoint/data mismatch: model has " +
                             std::to_string(run.cfg.model.features) + " features, " + path +
                             " has " + std::to_string(ds.features()));
  }
  return data::rescale_time(ds, run.t_min, run.t_max);
}

int cmd_eval(const EvalArgs& a) {
  const train::LoadedRun run = train::load_run(a.checkpoint);
  train::RunConfig cfg = run.cfg;
  if (!a.task.empty()) cfg.task = data::parse_task(a.task);
  if (a.fraction) cfg.observed_fraction = *a.fraction;
  if (a.seed) cfg.seed = *a.seed;
  const data::Dataset ds = load_for(run, a.data);
  const train::Metrics m = train::evaluate(run.model, run.store, ds, cfg);
  const json j = metrics_json(m);
  std::cout << j.dump() << '\n';
  if (!a.out.empty()) {
    open_out(a.out) << j.dump(2) << '\n';
    write_manifest(a.out + ".manifest.json", "eval", train::to_json(cfg), cfg.seed,
                   {{"checkpoint", a.checkpoint}, {"data", a.data}});
  }
  return 0;
}

// nfe-study -----------------------------------------------------------------

struct NfeArgs {
  std::string out;
  std::string checkpoint;
  std::size_t dim = 10;
  std::size_t units = 100;
  double init_std = 0.5;
  std::size_t points = 100;
  double rtol = 1e-3;
  double atol = 1e-4;
  std::uint64_t seed = 0;
};

int cmd_nfe_study(const NfeArgs& a) {
  if (a.points < 2) throw UsageError("--points must be at least 2");
  ad::ParameterStore own;
  const ad::ParameterStore* store = &own;
  ode::OdeDynamics dyn;
  std::optional<train::LoadedRun> run;
  std::mt19937_64 rng(a.seed);
  if (!a.checkpoint.empty()) {
    run = train::load_run(a.checkpoint);
    const models::LatentModel* lm = run->model.latent();
    if (!lm || lm->config().decoder != models::DecoderKind::ode) {
      throw std::runtime_error("checkpoint/data mismatch: " + a.checkpoint +
                               " has no generative ODE");
    }
    dyn = lm->dynamics();
    store = &run->store;
  } else {
    ad::MlpSpec spec{{a.dim, a.units, a.dim}};
    spec.init_std = a.init_std;
    dyn = ode::OdeDynamics(ad::Mlp::create(own, "dynamics", spec, rng));
  }
  const std::size_t D = dyn.dim();
  Tensor z0(ad::Shape{1, D});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : z0.data()) v = normal(rng);

  std::vector<double> base(a.points);
  for (std::size_t i = 0; i < a.points; ++i) {
    base[i] = static_cast<double>(i) / static_cast<double>(a.points - 1);
  }
  ode::SolverConfig sc;
  sc.rtol = a.rtol;
  sc.atol = a.atol;
  std::vector<std::size_t> counts;
  for (std::size_t c : {2, 5, 10, 20, 50, 100, 200, 500}) {
    if (c <= a.points) counts.push_back(c);
  }
  std::vector<std::size_t> ends;
  for (std::size_t i = 1; i < a.points; ++i) ends.push_back(i);
  const auto by_points = ode::nfe_study(dyn.fn(), z0, base, counts, sc, store);
  const auto by_interval = ode::nfe_interval_study(dyn.fn(), z0, base, ends, sc, store);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  {
    std::ofstream o = open_out(dir / "nfe_vs_points.csv");
    ode::write_nfe_csv(o, by_points);
  }
  {
    std::ofstream o = open_out(dir / "nfe_vs_interval.csv");
    ode::write_nfe_interval_csv(o, by_interval);
  }
  const json cfg = {{"dim", D},         {"units", a.units},   {"init_std", a.init_std},
                    {"points", a.points}, {"solver", train::to_json(sc)},
                    {"checkpoint", a.checkpoint}};
  write_manifest(dir / "manifest.json", "nfe-study", cfg, a.seed);
  return 0;
}

// reconstruct ---------------------------------------------------------------

struct ReconArgs {
  std::string checkpoint;
  std::string data;
  std::string series_id;
  std::size_t condition_on = 10;
  std::size_t samples = 10;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_reconstruct(const ReconArgs& a) {
  const train::LoadedRun run = train::load_run(a.checkpoint);
  const models::LatentModel* lm = run.model.latent();
  if (!lm) {
    throw std::runtime_error("checkpoint/data mismatch: reconstruct needs an encoder-decoder model");
  }
  const data::Dataset ds = load_for(run, a.data);
  const auto it = std::find_if(ds.series.begin(), ds.series.end(),
                               [&](const data::TimeSeries& s) { return s.id == a.series_id; });
  if (it == ds.series.end()) throw std::runtime_error("no series '" + a.series_id + "' in " + a.data);
  const data::TimeSeries& s = *it;
  if (a.condition_on > s.observed()) {
    throw UsageError("--condition-on " + std::to_string(a.condition_on) + " exceeds the " +
                     std::to_string(s.observed()) + " observed points");
  }
  if (a.samples == 0) throw UsageError("--samples must be positive");

  ad::Graph g(&run.store);
  std::mt19937_64 rng(a.seed);
  const std::size_t L = lm->z0_dims();
  models::PosteriorGaussian q;
  if (a.condition_on == 0) {
    q.mu = ad::constant(g, Tensor(ad::Shape{1, L}));
    q.sigma = ad::constant(g, Tensor(ad::Shape{1, L}, 1.0));
  } else {
    const double p = static_cast<double>(a.condition_on) / static_cast<double>(s.observed());
    const data::TimeSeries cond = data::subsample_for_interpolation(s, p, a.seed);
    const std::vector<data::TimeSeries> one{cond};
    const data::Batch b = data::make_batch(one);
    q = lm->encode(g, b, data::Task::interpolation, 0.0);
  }
  const std::vector<double>& times = s.times;
  const Var z = ad::concat({q.mu, models::sample_z0(q, a.samples, rng)}, 0);
  const models::DecodeOutput dec = lm->decode(g, z, 0.0, times);

  std::ofstream out = open_out(a.out);
  out << "time,feature,observed,true,mean";
  for (std::size_t k = 0; k < a.samples; ++k) out << ",sample_" << k;
  out << '\n';
  out.precision(17);
  const double span = run.t_max - run.t_min;
  for (std::size_t t = 0; t < times.size(); ++t) {
    const Tensor& m = dec.mean[t].value();
    for (std::size_t d = 0; d < s.features(); ++d) {
      out << run.t_min + times[t] * span << ',' << d << ',' << s.mask.at(t, d) << ',';
      if (s.mask.at(t, d) != 0.0) out << s.values.at(t, d);
      for (std::size_t r = 0; r <= a.samples; ++r) out << ',' << m.at(r, d);
      out << '\n';
    }
  }
  write_manifest(a.out + ".manifest.json", "reconstruct", train::to_json(run.cfg), a.seed,
                 {{"checkpoint", a.checkpoint},
                  {"data", a.data},
                  {"series_id", a.series_id},
                  {"condition_on", a.condition_on},
                  {"samples", a.samples}});
  return 0;
}

// toy-table -----------------------------------------------------------------

struct TableArgs {
  std::string data;
  std::string config;
  std::string out;
  std::size_t seeds = 1;
  std::optional<std::size_t> epochs;
  std::uint64_t seed = 0;
};

int cmd_toy_table(const TableArgs& a) {
  if (a.seeds == 0) throw UsageError("--seeds must be positive");
  train::RunConfig base =
      a.config.empty() ? train::desk_scale_config() : train::load_run_config(a.config);
  if (a.epochs) base.epochs = *a.epochs;
  if (!a.data.empty()) base.data_path = a.data;
  const data::Dataset raw = train::load_or_generate(base);

  const auto& rows = train::toy_table_rows();
  const std::size_t P = train::kToyPercents.size();
  std::vector<train::ToyCellResult> cells;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < 2 * P; ++c) {
      const data::Task task = c < P ? data::Task::interpolation : data::Task::extrapolation;
      const double frac = train::kToyPercents[c % P] / 100.0;
      for (std::size_t k = 0; k < a.seeds; ++k) {
        const std::uint64_t seed = train::toy_cell_seed(a.seed, r, c, k);
        const train::RunConfig cfg = train::toy_cell_config(base, rows[r], task, frac, seed);
        const train::PreparedData prepared = train::prepare_data(cfg, raw);
        const train::TrainResult res = train::train(cfg, prepared);
        const double mse = res.log.empty()
                               ? train::evaluate(res.model, res.store, prepared.test, cfg).mse
                               : res.log.back().test_mse;
        cells.push_back({r, c, k, mse});
        if (verbosity() > 0) {
          std::cerr << rows[r].label << ' ' << data::task_name(task) << ' '
                    << train::kToyPercents[c % P] << "% repeat " << k << " mse " << mse << '\n';
        }
      }
    }
  }
  const fs::path out(a.out);
  {
    std::ofstream o = open_out(out);
    train::write_toy_table(o, cells);
  }
  {
    std::ofstream o = open_out(out.string() + ".cells.csv");
    train::write_toy_cells(o, cells);
  }
  write_manifest(out.string() + ".manifest.json", "toy-table", train::to_json(base), a.seed,
                 {{"seeds", a.seeds}, {"cell_seed", "derive_seed(seed, 16*row + column, repeat)"}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time sequence models for irregularly sampled series"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(CTSEQ_VERSION));

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate the toy sinusoid dataset as CSV");
  g->add_option("--out", gen.out, "Output CSV path")->required();
  g->add_option("--n", gen.n, "Number of series");
  g->add_option("--points", gen.points, "Time points per series");
  g->add_option("--noise-std", gen.noise_std, "Observation noise std")->check(CLI::NonNegativeNumber);
  g->add_option("--t-max", gen.t_max, "End of the sampling interval")->check(CLI::PositiveNumber);
  g->add_flag("--shared-times", gen.shared_times, "One irregular time grid for all series");
  g->add_option("--seed", gen.seed, "Random seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model from a JSON run config");
  t->add_option("--config", tr.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  t->add_option("--out-dir", tr.out_dir, "Output directory (overrides out_dir)");
  t->add_option("--epochs", tr.epochs, "Override epochs");
  t->add_option("--seed", tr.seed, "Override seed");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a CSV dataset");
  e->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data)->required()->check(CLI::ExistingFile);
  e->add_option("--task", ev.task, "interpolation|extrapolation (default: as trained)");
  e->add_option("--observed-fraction", ev.fraction)->check(CLI::Range(0.0, 1.0));
  e->add_option("--seed", ev.seed, "Subsampling seed (default: as trained)");
  e->add_option("--out", ev.out, "Write metrics JSON here");

  NfeArgs nf;
  auto* n = app.add_subcommand("nfe-study", "NFE against requested points and interval length");
  n->add_option("--out", nf.out, "Output directory")->required();
  n->add_option("--checkpoint", nf.checkpoint, "Use the generative ODE of a trained model")
      ->check(CLI::ExistingFile);
  n->add_option("--dim", nf.dim, "State dimension of the random dynamics");
  n->add_option("--units", nf.units, "Hidden units of the random dynamics");
  n->add_option("--init-std", nf.init_std, "Weight init std of the random dynamics");
  n->add_option("--points", nf.points, "Base grid size on [0, 1]");
  n->add_option("--rtol", nf.rtol);
  n->add_option("--atol", nf.atol);
  n->add_option("--seed", nf.seed);

  ReconArgs rc;
  auto* r = app.add_subcommand("reconstruct", "Posterior samples for one series as CSV");
  r->add_option("--checkpoint", rc.checkpoint)->required()->check(CLI::ExistingFile);
  r->add_option("--data", rc.data)->required()->check(CLI::ExistingFile);
  r->add_option("--series-id", rc.series_id)->required();
  r->add_option("--condition-on", rc.condition_on, "Observed points to condition on (0: prior)");
  r->add_option("--samples", rc.samples, "Trajectories to sample");
  r->add_option("--seed", rc.seed);
  r->add_option("--out", rc.out, "Output CSV")->required();

  TableArgs tb;
  auto* y = app.add_subcommand("toy-table", "Train every toy-table cell and write mean MSE");
  y->add_option("--data", tb.data, "Toy dataset CSV (generated from the config when omitted)");
  y->add_option("--config", tb.config, "Base run config (JSON)")->check(CLI::ExistingFile);
  y->add_option("--seeds", tb.seeds, "Repeats per cell");
  y->add_option("--epochs", tb.epochs, "Override epochs");
  y->add_option("--seed", tb.seed, "Base seed");
  y->add_option("--out", tb.out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*n) return cmd_nfe_study(nf);
    if (*r) return cmd_reconstruct(rc);
    if (*y) return cmd_toy_table(tb);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  } catch (const train::ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  }
  return 1;
}
