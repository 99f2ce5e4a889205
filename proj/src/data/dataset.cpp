// SPDX-License-Identifier: Apache-2.0
#include "ctseq/data/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace ctseq::data {

std::size_t TimeSeries::observed() const {
  std::size_t n = 0;
  const std::size_t d = features();
  for (std::size_t t = 0; t < length(); ++t) {
    for (std::size_t f = 0; f < d; ++f) {
      if (mask.at(t, f) != 0.0) {
        ++n;
        break;
      }
    }
  }
  return n;
}

void TimeSeries::validate() const {
  const std::string who = "series '" + id + "': ";
  if (values.shape() != mask.shape()) throw DataError(who + "values and mask shapes differ");
  if (values.rank() != 2 || values.rows() != times.size()) {
    throw DataError(who + "values must be [times, features]");
  }
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) {
      throw DataError(who + "times not strictly increasing at index " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0 && mask[i] != 1.0) throw DataError(who + "mask entries must be 0 or 1");
    if (mask[i] == 0.0 && values[i] != 0.0) throw DataError(who + "masked-out value is nonzero");
  }
  if (!point_labels.empty() && point_labels.size() != times.size()) {
    throw DataError(who + "point labels must match the number of times");
  }
}

std::size_t Dataset::features() const {
  return series.empty() ? 0 : series.front().features();
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

namespace {

std::vector<double> draw_times(std::mt19937_64& rng, const ToyConfig& c) {
  std::uniform_real_distribution<double> u(c.t_min, c.t_max);
  std::set<double> picked;
  while (picked.size() < c.points) picked.insert(u(rng));
  return {picked.begin(), picked.end()};
}

}  // namespace

ToyData gen_toy(const ToyConfig& c) {
  if (c.n == 0) throw std::invalid_argument("gen_toy: n must be positive");
  if (c.points == 0) throw std::invalid_argument("gen_toy: points must be positive");
  if (!(c.t_max > c.t_min)) throw std::invalid_argument("gen_toy: empty time interval");
  if (c.noise_std < 0.0) throw std::invalid_argument("gen_toy: negative noise std");

  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> freq(c.freq_lo, c.freq_hi);
  std::normal_distribution<double> start(c.y0_mean, c.y0_std);
  std::normal_distribution<double> noise(0.0, 1.0);

  ToyData out;
  std::vector<double> shared;
  if (c.shared_times) shared = draw_times(rng, c);
  for (std::size_t i = 0; i < c.n; ++i) {
    const double f = freq(rng);
    const double y0 = start(rng);
    TimeSeries s;
    s.id = std::to_string(i);
    s.times = c.shared_times ? shared : draw_times(rng, c);
    s.values = Tensor(ad::Shape{c.points, 1});
    s.mask = Tensor(ad::Shape{c.points, 1}, 1.0);
    for (std::size_t t = 0; t < c.points; ++t) {
      double y = y0 + std::sin(2.0 * std::numbers::pi * f * s.times[t]);
      if (c.noise_std > 0.0) y += c.noise_std * noise(rng);
      s.values[t] = y;
    }
    out.dataset.series.push_back(std::move(s));
    out.y0.push_back(y0);
    out.freq.push_back(f);
  }
  return out;
}

TimeSeries subsample_for_interpolation(const TimeSeries& series, double p,
                                       std::uint64_t seed) {
  if (!(p > 0.0) || p > 1.0) {
    throw std::invalid_argument("subsample: observed fraction must be in (0, 1]");
  }
  std::vector<std::size_t> obs;
  const std::size_t d = series.features();
  for (std::size_t t = 0; t < series.length(); ++t) {
    for (std::size_t f = 0; f < d; ++f) {
      if (series.mask.at(t, f) != 0.0) {
        obs.push_back(t);
        break;
      }
    }
  }
  // 1e-9 absorbs products such as 0.3 * 100 = 30.000000000000004
  const auto keep = static_cast<std::size_t>(
      std::ceil(p * static_cast<double>(obs.size()) - 1e-9));
  if (keep >= obs.size()) return series;

  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < keep; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, obs.size() - 1);
    std::swap(obs[i], obs[pick(rng)]);
  }
  TimeSeries out = series;
  for (std::size_t i = keep; i < obs.size(); ++i) {
    for (std::size_t f = 0; f < d; ++f) {
      out.values.at(obs[i], f) = 0.0;
      out.mask.at(obs[i], f) = 0.0;
    }
  }
  return out;
}

namespace {

TimeSeries take_rows(const TimeSeries& s, std::size_t begin, std::size_t end) {
  TimeSeries out;
  out.id = s.id;
  out.label = s.label;
  const std::size_t d = s.features();
  out.times.assign(s.times.begin() + begin, s.times.begin() + end);
  out.values = Tensor(ad::Shape{end - begin, d});
  out.mask = Tensor(ad::Shape{end - begin, d});
  for (std::size_t t = begin; t < end; ++t) {
    for (std::size_t f = 0; f < d; ++f) {
      out.values.at(t - begin, f) = s.values.at(t, f);
      out.mask.at(t - begin, f) = s.mask.at(t, f);
    }
  }
  if (!s.point_labels.empty()) {
    out.point_labels.assign(s.point_labels.begin() + begin, s.point_labels.begin() + end);
  }
  return out;
}

}  // namespace

ExtrapolationSplit split_for_extrapolation(const TimeSeries& series, double split_time) {
  if (series.length() < 2) {
    throw DataError("split_for_extrapolation: series '" + series.id +
                    "' needs at least 2 points");
  }
  const auto cut = static_cast<std::size_t>(
      std::lower_bound(series.times.begin(), series.times.end(), split_time) -
      series.times.begin());
  if (cut == series.length()) {
    throw DataError("split_for_extrapolation: series '" + series.id +
                    "' has no points after the split");
  }
  if (cut == 0) {
    throw DataError("split_for_extrapolation: series '" + series.id +
                    "' has no points before the split");
  }
  return {take_rows(series, 0, cut), take_rows(series, cut, series.length())};
}

std::pair<double, double> time_range(const Dataset& dataset) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : dataset.series) {
    if (s.times.empty()) continue;
    lo = std::min(lo, s.times.front());
    hi = std::max(hi, s.times.back());
  }
  if (!(hi >= lo)) return {0.0, 0.0};
  return {lo, hi};
}

Dataset rescale_time(const Dataset& dataset, double lo, double hi) {
  Dataset out = dataset;
  const double span = hi - lo;
  for (auto& s : out.series) {
    for (double& t : s.times) t = span > 0.0 ? (t - lo) / span : 0.0;
  }
  return out;
}

Dataset rescale_time(const Dataset& dataset) {
  const auto [lo, hi] = time_range(dataset);
  return rescale_time(dataset, lo, hi);
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& dataset, double train_fraction,
                                             std::uint64_t seed) {
  if (dataset.empty()) throw DataError("train_test_split: empty dataset");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("train_test_split: fraction must be in (0, 1)");
  }
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  const auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(dataset.size())));
  std::vector<std::size_t> tr(order.begin(), order.begin() + n_train);
  std::vector<std::size_t> te(order.begin() + n_train, order.end());
  std::sort(tr.begin(), tr.end());
  std::sort(te.begin(), te.end());
  Dataset a, b;
  for (auto i : tr) a.series.push_back(dataset.series[i]);
  for (auto i : te) b.series.push_back(dataset.series[i]);
  return {std::move(a), std::move(b)};
}

Tensor empirical_mean(const Dataset& dataset) {
  const std::size_t d = dataset.features();
  Tensor sum(ad::Shape{1, d}), count(ad::Shape{1, d});
  for (const auto& s : dataset.series) {
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      if (s.mask[i] != 0.0) {
        sum[i % d] += s.values[i];
        count[i % d] += 1.0;
      }
    }
  }
  for (std::size_t f = 0; f < d; ++f) sum[f] = count[f] > 0 ? sum[f] / count[f] : 0.0;
  return sum;
}

bool Batch::has_labels() const {
  return std::any_of(labels.begin(), labels.end(), [](int l) { return l >= 0; });
}

bool Batch::has_point_labels() const {
  for (const auto& row : point_labels) {
    if (std::any_of(row.begin(), row.end(), [](int l) { return l >= 0; })) return true;
  }
  return false;
}

Batch make_batch(std::span<const TimeSeries> series) {
  std::vector<double> grid;
  for (const auto& s : series) grid.insert(grid.end(), s.times.begin(), s.times.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return make_batch_on(series, grid);
}

Batch make_batch_on(std::span<const TimeSeries> series, const std::vector<double>& grid) {
  Batch b;
  b.times = grid;
  b.rows = series.size();
  b.features = series.empty() ? 0 : series.front().features();
  const ad::Shape rs{b.rows, b.features};
  b.values.assign(grid.size(), Tensor(rs));
  b.mask.assign(grid.size(), Tensor(rs));
  b.present.assign(grid.size(), Tensor(ad::Shape{b.rows, 1}));
  b.point_labels.assign(grid.size(), std::vector<int>(b.rows, -1));
  for (std::size_t r = 0; r < series.size(); ++r) {
    const TimeSeries& s = series[r];
    if (s.features() != b.features) throw DataError("make_batch: feature counts differ");
    std::vector<std::size_t> idx;
    idx.reserve(s.length());
    for (std::size_t t = 0; t < s.length(); ++t) {
      const auto it = std::lower_bound(grid.begin(), grid.end(), s.times[t]);
      if (it == grid.end() || *it != s.times[t]) {
        throw DataError("make_batch: time " + std::to_string(s.times[t]) +
                        " of series '" + s.id + "' missing from grid");
      }
      const auto g = static_cast<std::size_t>(it - grid.begin());
      idx.push_back(g);
      b.present[g][r] = 1.0;
      for (std::size_t f = 0; f < b.features; ++f) {
        b.values[g].at(r, f) = s.values.at(t, f);
        b.mask[g].at(r, f) = s.mask.at(t, f);
      }
      if (!s.point_labels.empty()) b.point_labels[g][r] = s.point_labels[t];
    }
    b.index.push_back(std::move(idx));
    b.labels.push_back(s.label.value_or(-1));
    b.ids.push_back(s.id);
  }
  return b;
}

std::vector<TimeSeries> unbatch(const Batch& b) {
  std::vector<TimeSeries> out;
  for (std::size_t r = 0; r < b.rows; ++r) {
    TimeSeries s;
    s.id = b.ids[r];
    const auto& idx = b.index[r];
    s.values = Tensor(ad::Shape{idx.size(), b.features});
    s.mask = Tensor(ad::Shape{idx.size(), b.features});
    bool any_point_label = false;
    for (std::size_t t = 0; t < idx.size(); ++t) {
      s.times.push_back(b.times[idx[t]]);
      for (std::size_t f = 0; f < b.features; ++f) {
        s.values.at(t, f) = b.values[idx[t]].at(r, f);
        s.mask.at(t, f) = b.mask[idx[t]].at(r, f);
      }
      any_point_label |= b.point_labels[idx[t]][r] >= 0;
    }
    if (any_point_label) {
      for (std::size_t g : idx) s.point_labels.push_back(b.point_labels[g][r]);
    }
    if (b.labels[r] >= 0) s.label = b.labels[r];
    out.push_back(std::move(s));
  }
  return out;
}

std::string task_name(Task t) {
  return t == Task::interpolation ? "interpolation" : "extrapolation";
}

Task parse_task(const std::string& name) {
  if (name == "interpolation" || name == "interp") return Task::interpolation;
  if (name == "extrapolation" || name == "extrap") return Task::extrapolation;
  throw std::invalid_argument("unknown task '" + name +
                              "' (expected interpolation|extrapolation)");
}

TaskBatch make_task_batch(std::span<const TimeSeries> series, const TaskOptions& opt,
                          std::span<const std::uint64_t> seeds) {
  if (seeds.size() != series.size()) {
    throw std::invalid_argument("make_task_batch: one seed per series required");
  }
  std::vector<TimeSeries> cond, target;
  cond.reserve(series.size());
  target.reserve(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (opt.task == Task::interpolation) {
      cond.push_back(opt.observed_fraction < 1.0
                         ? subsample_for_interpolation(series[i], opt.observed_fraction, seeds[i])
                         : series[i]);
      target.push_back(series[i]);
    } else {
      ExtrapolationSplit sp = split_for_extrapolation(series[i], opt.split_time);
      cond.push_back(opt.observed_fraction < 1.0
                         ? subsample_for_interpolation(sp.conditioning,
                                                       opt.observed_fraction, seeds[i])
                         : std::move(sp.conditioning));
      target.push_back(std::move(sp.target));
    }
  }
  const Batch full = make_batch(series);
  TaskBatch tb;
  tb.task = opt.task;
  tb.split_time = opt.split_time;
  tb.anchor = opt.task == Task::interpolation ? opt.timeline_start : opt.split_time;
  tb.cond = make_batch_on(cond, full.times);
  tb.target = make_batch_on(target, full.times);
  return tb;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
bool parse_field(std::string_view s, T& out) {
  if (s.empty()) return false;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      parts.push_back(line.substr(start));
      return parts;
    }
    parts.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

void export_csv(std::ostream& out, const Dataset& dataset) {
  out << "series_id,time,feature_index,value\n";
  for (const auto& s : dataset.series) {
    if (s.id.find(',') != std::string::npos || s.id.empty()) {
      throw DataError("export_csv: series id '" + s.id + "' cannot be written");
    }
    for (std::size_t t = 0; t < s.length(); ++t) {
      bool any = false;
      for (std::size_t f = 0; f < s.features(); ++f) {
        if (s.mask.at(t, f) == 0.0) continue;
        any = true;
        out << s.id << ',' << format_double(s.times[t]) << ',' << f << ','
            << format_double(s.values.at(t, f)) << '\n';
      }
      if (!any) out << s.id << ',' << format_double(s.times[t]) << ",,\n";
    }
  }
}

void export_csv(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw DataError("export_csv: cannot open '" + path + "' for writing");
  export_csv(out, dataset);
  if (!out) throw DataError("export_csv: write to '" + path + "' failed");
}

Dataset ingest_csv(std::istream& in, std::size_t features) {
  struct Entry {
    std::map<std::size_t, double> values;
  };
  std::vector<std::string> order;
  std::map<std::string, std::map<double, Entry>> rows;
  std::string line;
  std::size_t lineno = 0;
  std::size_t max_feature = 0;
  bool any_feature = false;

  if (!std::getline(in, line)) throw DataError("ingest_csv: empty input");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "series_id,time,feature_index,value") {
    throw DataError("ingest_csv: line 1: expected header series_id,time,feature_index,value");
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto parts = split_commas(line);
    const std::string where = "ingest_csv: line " + std::to_string(lineno) + ": ";
    if (parts.size() != 4) throw DataError(where + "expected 4 fields");
    if (parts[0].empty()) throw DataError(where + "empty series_id");
    double t = 0.0;
    if (!parse_field(parts[1], t) || !std::isfinite(t)) throw DataError(where + "bad time");
    const std::string id(parts[0]);
    if (!rows.count(id)) order.push_back(id);
    Entry& e = rows[id][t];
    if (parts[2].empty() && parts[3].empty()) continue;
    std::size_t f = 0;
    double v = 0.0;
    if (!parse_field(parts[2], f)) throw DataError(where + "bad feature_index");
    if (!parse_field(parts[3], v) || !std::isfinite(v)) throw DataError(where + "bad value");
    if (!e.values.emplace(f, v).second) {
      throw DataError(where + "duplicate entry for series '" + id + "', feature " +
                      std::to_string(f));
    }
    max_feature = std::max(max_feature, f);
    any_feature = true;
  }
  const std::size_t d = features ? features : (any_feature ? max_feature + 1 : 1);
  if (features && any_feature && max_feature >= features) {
    throw DataError("ingest_csv: feature index " + std::to_string(max_feature) +
                    " exceeds declared count " + std::to_string(features));
  }
  Dataset ds;
  for (const auto& id : order) {
    const auto& points = rows.at(id);
    TimeSeries s;
    s.id = id;
    s.values = Tensor(ad::Shape{points.size(), d});
    s.mask = Tensor(ad::Shape{points.size(), d});
    std::size_t t = 0;
    for (const auto& [time, entry] : points) {
      s.times.push_back(time);
      for (const auto& [f, v] : entry.values) {
        s.values.at(t, f) = v;
        s.mask.at(t, f) = 1.0;
      }
      ++t;
    }
    ds.series.push_back(std::move(s));
  }
  return ds;
}

Dataset ingest_csv(const std::string& path, std::size_t features) {
  std::ifstream in(path);
  if (!in) throw DataError("ingest_csv: cannot open '" + path + "'");
  return ingest_csv(in, features);
}

}  // namespace ctseq::data
