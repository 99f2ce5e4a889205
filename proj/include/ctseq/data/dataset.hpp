// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>
#include <utility>

#include "ctseq/autodiff/tensor.hpp"

namespace ctseq::data {

using ad::Tensor;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One irregularly sampled multivariate record. values and mask are
/// [times, features]; an unobserved entry has mask 0 and value 0.
struct TimeSeries {
  std::string id;
  std::vector<double> times;
  Tensor values;
  Tensor mask;
  std::optional<int> label;          // per-sequence class
  std::vector<int> point_labels;     // per-time class, empty when absent

  std::size_t length() const { return times.size(); }
  std::size_t features() const { return values.cols(); }
  std::size_t observed() const;

  /// Throws DataError when times are not strictly increasing, shapes
  /// disagree, the mask is not 0/1, or a masked-out value is nonzero.
  void validate() const;
};

struct Dataset {
  std::vector<TimeSeries> series;
  std::size_t size() const { return series.size(); }
  bool empty() const { return series.empty(); }
  std::size_t features() const;
};

/// splitmix64 mix of a base seed with two stream indices. Used wherever a
/// per-series or per-epoch stream is derived from a run seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

struct ToyConfig {
  std::size_t n = 1000;
  std::size_t points = 100;
  double t_min = 0.0;
  double t_max = 5.0;
  double freq_lo = 0.5;
  double freq_hi = 1.0;
  double y0_mean = 1.0;
  double y0_std = 0.1;
  double noise_std = 0.1;
  /// One irregular time grid for every series instead of a draw per series.
  bool shared_times = false;
  std::uint64_t seed = 0;
};

struct ToyData {
  Dataset dataset;
  std::vector<double> y0;
  std::vector<double> freq;
};

/// y(t) = y0 + sin(2 pi f t) + noise with f ~ U[freq_lo, freq_hi],
/// y0 ~ N(y0_mean, y0_std) and times drawn uniformly on [t_min, t_max].
ToyData gen_toy(const ToyConfig& config);

/// Keeps ceil(p * observed) of the observed time points, chosen uniformly;
/// the rest are masked out. Surviving entries are untouched.
TimeSeries subsample_for_interpolation(const TimeSeries& series, double p,
                                       std::uint64_t seed);

struct ExtrapolationSplit {
  TimeSeries conditioning;  // times < split_time
  TimeSeries target;        // times >= split_time
};

ExtrapolationSplit split_for_extrapolation(const TimeSeries& series,
                                           double split_time);

/// Maps every time to (t - t_min) / (t_max - t_min) with dataset-wide
/// extremes. A dataset with a single distinct time maps it to 0.
Dataset rescale_time(const Dataset& dataset);
/// Same map with given extremes, e.g. those of the training data.
Dataset rescale_time(const Dataset& dataset, double t_min, double t_max);
/// Earliest and latest time over all series ({0, 0} when there are none).
std::pair<double, double> time_range(const Dataset& dataset);

std::pair<Dataset, Dataset> train_test_split(const Dataset& dataset,
                                             double train_fraction,
                                             std::uint64_t seed);

/// Mean of every feature over observed entries (0 when never observed),
/// as a [1, features] tensor.
Tensor empirical_mean(const Dataset& dataset);

/// Series aligned on the sorted union of their times. Row r of every
/// per-time tensor belongs to series r.
struct Batch {
  std::vector<double> times;
  std::size_t rows = 0;
  std::size_t features = 0;
  std::vector<Tensor> values;    // per time, [rows, features]
  std::vector<Tensor> mask;      // per time, [rows, features]
  std::vector<Tensor> present;   // per time, [rows, 1]: time belongs to the series
  std::vector<std::vector<std::size_t>> index;  // per series, grid index of each own time
  std::vector<int> labels;                      // per series, -1 when absent
  std::vector<std::vector<int>> point_labels;   // per time, per row, -1 when absent
  std::vector<std::string> ids;

  std::size_t steps() const { return times.size(); }
  bool has_labels() const;
  bool has_point_labels() const;
};

Batch make_batch(std::span<const TimeSeries> series);
/// Same alignment on a caller-supplied grid that contains every series time.
Batch make_batch_on(std::span<const TimeSeries> series, const std::vector<double>& grid);
std::vector<TimeSeries> unbatch(const Batch& batch);

enum class Task { interpolation, extrapolation };
std::string task_name(Task t);
Task parse_task(const std::string& name);

/// Conditioning and target views of the same series on one union grid.
/// Interpolation conditions on a subsample and targets the full series.
/// Extrapolation conditions on (a subsample of) the points before the
/// split time and targets the points from the split time on.
struct TaskBatch {
  Task task = Task::interpolation;
  Batch cond;
  Batch target;
  double split_time = 0.5;
  /// Time the latent initial state refers to.
  double anchor = 0.0;
};

struct TaskOptions {
  Task task = Task::interpolation;
  double observed_fraction = 1.0;
  double split_time = 0.5;
  double timeline_start = 0.0;
};

/// `seeds[i]` drives the subsample of series i.
TaskBatch make_task_batch(std::span<const TimeSeries> series, const TaskOptions& opt,
                          std::span<const std::uint64_t> seeds);

/// Long-format CSV `series_id,time,feature_index,value`. A time point with
/// nothing observed is written with empty feature_index and value so that
/// export followed by ingest reproduces the times exactly.
void export_csv(std::ostream& out, const Dataset& dataset);
void export_csv(const std::string& path, const Dataset& dataset);
/// `features` of 0 infers the count from the largest feature index.
Dataset ingest_csv(std::istream& in, std::size_t features = 0);
Dataset ingest_csv(const std::string& path, std::size_t features = 0);

}  // namespace ctseq::data
