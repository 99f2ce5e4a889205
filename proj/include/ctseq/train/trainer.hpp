// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctseq/data/dataset.hpp"
#include "ctseq/train/model.hpp"
#include "ctseq/train/optim.hpp"

namespace ctseq::train {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t epoch, std::size_t batch)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_, batch_;
};

struct RunConfig {
  ModelConfig model;
  data::Task task = data::Task::interpolation;
  double observed_fraction = 1.0;
  double split_time = 0.5;
  std::size_t epochs = 30;
  std::size_t batch_size = 50;
  std::uint64_t seed = 0;
  double lr = 0.01;
  double lr_decay = 0.999;
  double kl_coef = 0.99;
  /// Unset: 100 when the data carries labels, else 0.
  std::optional<double> ce_weight;
  double sampling_prob = 0.5;
  std::size_t n_samples = 3;
  double poisson_weight = 1.0;
  double train_fraction = 0.8;
  /// Evaluate on the test split every this many epochs (and after the last).
  std::size_t eval_every = 1;
  /// Long-format CSV to train on; the toy generator is used when empty.
  std::string data_path;
  data::ToyConfig toy;
  std::string out_dir;
};

/// Keys accepted at the top level of a run config file.
const std::vector<std::string>& run_config_keys();
/// Throws ConfigError naming the offending key; `model` and `task` are required.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json to_json(const RunConfig& cfg);

ode::SolverConfig parse_solver(const nlohmann::json& j);
nlohmann::json to_json(const ode::SolverConfig& s);

/// Rescaled, split data plus what a model needs to be rebuilt later.
struct PreparedData {
  data::Dataset train;
  data::Dataset test;
  Tensor mean;  // empirical feature mean of the training split
  double t_min = 0.0;
  double t_max = 1.0;
  std::size_t classes = 0;
  std::size_t point_classes = 0;
};

/// Rescales time to [0, 1] over the whole dataset, then splits.
PreparedData prepare_data(const RunConfig& cfg, const data::Dataset& raw);
/// Loads `data_path` or generates the toy set.
data::Dataset load_or_generate(const RunConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_mse = 0.0;
  double kl_weight = 0.0;
  double lr = 0.0;
};

void write_metrics_csv(std::ostream& out, const std::vector<EpochLog>& log);

struct Metrics {
  double mse = 0.0;
  std::size_t count = 0;  // scored entries
  std::optional<double> ce;
  std::optional<double> accuracy;
  std::optional<double> auc;
};

/// Area under the ROC curve by the trapezoid rule over score thresholds;
/// tied scores form a single threshold. NaN when a class is missing.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Subsample seed of test series i; fixed across epochs.
std::uint64_t eval_seed(std::uint64_t run_seed, std::size_t i);

/// MSE over target entries (the full series for interpolation, the part
/// from the split on for extrapolation), plus classification metrics when
/// labels and a classifier are present.
Metrics evaluate(const Model& model, const ad::ParameterStore& store, const data::Dataset& test,
                 const RunConfig& cfg);

struct TrainResult {
  Model model;
  ad::ParameterStore store;  // after the last epoch
  ad::ParameterStore best;   // at the lowest test MSE
  std::size_t best_epoch = 0;
  double best_mse = 0.0;
  std::vector<EpochLog> log;
};

/// `progress` receives one line per epoch when set.
TrainResult train(const RunConfig& cfg, const PreparedData& data,
                  std::ostream* progress = nullptr);

ModelConfig resolved_model(const RunConfig& cfg, const PreparedData& data);

/// Checkpoint with the run config, feature mean and time range in its meta line.
void save_run(const std::string& path, const ad::ParameterStore& store, const RunConfig& cfg,
              const PreparedData& data);

struct LoadedRun {
  RunConfig cfg;
  Model model;
  ad::ParameterStore store;
  Tensor mean;
  double t_min = 0.0;
  double t_max = 1.0;
};

LoadedRun load_run(const std::string& path);

}  // namespace ctseq::train
