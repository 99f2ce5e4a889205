// SPDX-License-Identifier: Apache-2.0
#include "ctseq/ode/solver.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace ctseq::ode {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double a21 = 1.0 / 5.0;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                 a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0,
                 a63 = 46732.0 / 5247.0, a64 = 49.0 / 176.0,
                 a65 = -5103.0 / 18656.0;
constexpr std::array<double, 7> b5 = {35.0 / 384.0,     0.0,
                                      500.0 / 1113.0,   125.0 / 192.0,
                                      -2187.0 / 6784.0, 11.0 / 84.0,
                                      0.0};
// b5 - b4
constexpr std::array<double, 7> berr = {71.0 / 57600.0,     0.0,
                                        -71.0 / 16695.0,    71.0 / 1920.0,
                                        -17253.0 / 339200.0, 22.0 / 525.0,
                                        -1.0 / 40.0};

// Continuous extension: b_i(theta) = sum_j P[i][j] theta^(j+1).
constexpr double P[7][4] = {
    {1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0,
     -12715105075.0 / 11282082432.0},
    {0.0, 0.0, 0.0, 0.0},
    {0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0,
     87487479700.0 / 32700410799.0},
    {0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0,
     -10690763975.0 / 1880347072.0},
    {0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0,
     701980252875.0 / 199316789632.0},
    {0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0,
     -1453857185.0 / 822651844.0},
    {0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0,
     69997945.0 / 29380423.0}};

Var combine(Var y, std::initializer_list<Var> ks, std::initializer_list<double> ws,
            double h) {
  std::vector<Var> terms{y};
  std::vector<double> coeffs{1.0};
  auto w = ws.begin();
  for (const Var& k : ks) {
    terms.push_back(k);
    coeffs.push_back(h * *w++);
  }
  return ad::lincomb(terms, coeffs);
}

struct CountingDynamics {
  const Dynamics& f;
  double sign;
  std::size_t* nfe;
  Var operator()(Var z) const {
    ++*nfe;
    Var d = f(z);
    if (d.shape() != z.shape()) {
      throw ad::ShapeError("odesolve: dynamics returned " +
                           ad::shape_string(d.shape()) + " for state " +
                           ad::shape_string(z.shape()));
    }
    return sign < 0 ? ad::scale(d, -1.0) : d;
  }
};

std::vector<double> to_solver_time(std::span<const double> times, double& sign) {
  sign = 1.0;
  if (times.size() >= 2 && times[1] < times[0]) sign = -1.0;
  std::vector<double> tau(times.begin(), times.end());
  for (std::size_t i = 1; i < tau.size(); ++i) {
    const bool ok = sign > 0 ? times[i] > times[i - 1] : times[i] < times[i - 1];
    if (!ok || !std::isfinite(times[i])) {
      throw SolverError("odesolve: times must be strictly monotone (index " +
                        std::to_string(i) + ")");
    }
  }
  if (!std::isfinite(times[0])) throw SolverError("odesolve: non-finite time");
  if (sign < 0) {
    for (double& t : tau) t = -t;
  }
  return tau;
}

double default_step(const SolverConfig& c, double span) {
  return c.initial_step > 0.0 ? c.initial_step : 1e-2 * span;
}

double scaled_rms(const Tensor& v, const Tensor& y0, double rtol, double atol) {
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = v[i] / (atol + rtol * std::abs(y0[i]));
    acc += r * r;
  }
  return v.size() ? std::sqrt(acc / static_cast<double>(v.size())) : 0.0;
}

// Hairer, Norsett & Wanner's starting step estimate. It looks only at the
// state and slope, never at the interval, so a longer solve starts with the
// same steps as a shorter one.
double initial_step(const CountingDynamics& f, Var y0, Var f0, double rtol,
                    double atol) {
  // copies: evaluating f below grows the graph and moves node storage
  const Tensor y = y0.value();
  const Tensor d = f0.value();
  const double d0 = scaled_rms(y, y, rtol, atol);
  const double d1 = scaled_rms(d, y, rtol, atol);
  const double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  const Var f1 = f(combine(y0, {f0}, {1.0}, h0));
  Tensor diff = f1.value();
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= d[i];
  const double d2 = scaled_rms(diff, y, rtol, atol) / h0;
  const double h1 = (d1 <= 1e-15 && d2 <= 1e-15)
                        ? std::max(1e-6, h0 * 1e-3)
                        : std::pow(0.01 / std::max(d1, d2), 1.0 / 5.0);
  return std::min(100.0 * h0, h1);
}

SolveResult solve_fixed(const CountingDynamics& f, Var z0,
                        const std::vector<double>& tau, const SolverConfig& c,
                        std::size_t& nfe) {
  SolveResult r;
  r.states.push_back(z0);
  const double hmax = default_step(c, tau.back() - tau.front());
  const Dynamics step_fn = [&f](Var z) { return f(z); };
  Var y = z0;
  for (std::size_t i = 1; i < tau.size(); ++i) {
    const double span = tau[i] - tau[i - 1];
    const auto n = static_cast<std::size_t>(
        std::max(1.0, std::ceil(span / hmax - 1e-9)));
    const double h = span / static_cast<double>(n);
    for (std::size_t s = 0; s < n; ++s) {
      if (r.accepted >= c.max_steps) {
        r.nfe = nfe;
        throw MaxStepsExceeded("odesolve: exceeded max_steps=" +
                                   std::to_string(c.max_steps),
                               std::move(r));
      }
      y = c.method == Method::euler ? euler_step(step_fn, y, h)
                                    : rk4_step(step_fn, y, h);
      ++r.accepted;
    }
    r.states.push_back(y);
  }
  return r;
}

SolveResult solve_dopri5(const CountingDynamics& f, Var z0,
                         const std::vector<double>& tau, const SolverConfig& c,
                         std::size_t& nfe) {
  SolveResult r;
  r.states.push_back(z0);
  const Dynamics step_fn = [&f](Var z) { return f(z); };

  const std::vector<double>* replay = nullptr;
  std::vector<double>* record = nullptr;
  if (c.schedule) {
    auto& s = *c.schedule;
    if (s.mode == StepSchedule::Mode::replay) {
      if (s.cursor >= s.solves.size()) {
        throw SolverError("odesolve: step schedule exhausted");
      }
      replay = &s.solves[s.cursor++];
    } else {
      s.solves.emplace_back();
      record = &s.solves.back();
    }
  }

  Var y = z0;
  Var k1 = f(y);
  double t = tau.front();
  double h = replay ? 0.0
             : c.initial_step > 0.0 ? c.initial_step
                                    : initial_step(f, y, k1, c.rtol, c.atol);
  std::size_t next = 1;
  std::size_t replay_pos = 0;

  while (next < tau.size()) {
    if (r.accepted + r.rejected >= c.max_steps) {
      r.nfe = nfe;
      throw MaxStepsExceeded("odesolve: exceeded max_steps=" +
                                 std::to_string(c.max_steps) + " at t=" +
                                 std::to_string(t),
                             std::move(r));
    }
    if (replay) {
      if (replay_pos >= replay->size()) {
        throw SolverError("odesolve: replayed step sequence too short");
      }
      h = (*replay)[replay_pos++];
    }
    Dopri5Step step = dopri5_step(step_fn, y, k1, h);
    const double err =
        replay ? 0.0 : error_norm(step.error, y.value(), step.y5.value(), c.rtol, c.atol);

    if (err <= 1.0) {
      // Steps are never clipped at the end of the interval; the last one
      // may overshoot and the final outputs are interpolated.
      const double t_new = t + h;
      while (next < tau.size() && tau[next] <= t_new) {
        if (tau[next] == t_new) {
          r.states.push_back(step.y5);
        } else {
          const auto w = dopri5_dense_weights((tau[next] - t) / h);
          std::vector<Var> terms{y};
          std::vector<double> coeffs{1.0};
          for (std::size_t i = 0; i < 7; ++i) {
            terms.push_back(step.k[i]);
            coeffs.push_back(h * w[i]);
          }
          r.states.push_back(ad::lincomb(terms, coeffs));
        }
        ++next;
      }
      if (record) record->push_back(h);
      t = t_new;
      y = step.y5;
      k1 = step.k[6];
      ++r.accepted;
    } else {
      ++r.rejected;
    }
    if (!replay) {
      double factor = err == 0.0 ? c.max_factor : c.safety * std::pow(err, -0.2);
      factor = std::clamp(factor, c.min_factor, c.max_factor);
      if (err > 1.0) factor = std::min(factor, 1.0);
      h *= factor;
    }
  }
  return r;
}

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::euler: return "euler";
    case Method::rk4: return "rk4";
    case Method::dopri5: return "dopri5";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  if (name == "euler") return Method::euler;
  if (name == "rk4") return Method::rk4;
  if (name == "dopri5") return Method::dopri5;
  throw std::invalid_argument("unknown solver method '" + name +
                              "' (expected euler|rk4|dopri5)");
}

void SolverConfig::validate() const {
  if (!(rtol > 0.0) || !(atol > 0.0)) {
    throw std::invalid_argument("solver: rtol and atol must be positive");
  }
  if (max_steps == 0) throw std::invalid_argument("solver: max_steps must be positive");
  if (initial_step < 0.0) throw std::invalid_argument("solver: initial_step must be >= 0");
  if (!(safety > 0.0) || !(min_factor > 0.0) || !(max_factor >= 1.0) ||
      min_factor > max_factor) {
    throw std::invalid_argument("solver: bad step controller settings");
  }
}

Tensor SolveResult::stacked() const {
  if (states.empty()) return Tensor(ad::Shape{0, 0});
  const std::size_t rows = states.front().rows();
  const std::size_t dim = states.front().cols();
  Tensor out(ad::Shape{states.size() * rows, dim});
  std::size_t o = 0;
  for (const Var& s : states) {
    for (double v : s.value().data()) out[o++] = v;
  }
  return out;
}

Var euler_step(const Dynamics& f, Var z, double dt) {
  return combine(z, {f(z)}, {1.0}, dt);
}

Var rk4_step(const Dynamics& f, Var z, double dt) {
  Var k1 = f(z);
  Var k2 = f(combine(z, {k1}, {0.5}, dt));
  Var k3 = f(combine(z, {k2}, {0.5}, dt));
  Var k4 = f(combine(z, {k3}, {1.0}, dt));
  return combine(z, {k1, k2, k3, k4}, {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0}, dt);
}

Dopri5Step dopri5_step(const Dynamics& f, Var z, Var k1, double h) {
  Dopri5Step s;
  s.k[0] = k1;
  s.k[1] = f(combine(z, {k1}, {a21}, h));
  s.k[2] = f(combine(z, {k1, s.k[1]}, {a31, a32}, h));
  s.k[3] = f(combine(z, {k1, s.k[1], s.k[2]}, {a41, a42, a43}, h));
  s.k[4] = f(combine(z, {k1, s.k[1], s.k[2], s.k[3]}, {a51, a52, a53, a54}, h));
  s.k[5] = f(combine(z, {k1, s.k[1], s.k[2], s.k[3], s.k[4]},
                     {a61, a62, a63, a64, a65}, h));
  s.y5 = combine(z, {k1, s.k[1], s.k[2], s.k[3], s.k[4], s.k[5]},
                 {b5[0], b5[1], b5[2], b5[3], b5[4], b5[5]}, h);
  s.k[6] = f(s.y5);

  // The error weights sum to zero, so they can act on k_i - k_1. That keeps
  // the estimate exactly zero when every stage agrees.
  const Tensor& y5 = s.y5.value();
  const Tensor& base = k1.value();
  s.error = Tensor(y5.shape(), 0.0);
  for (std::size_t i = 1; i < 7; ++i) {
    if (berr[i] == 0.0) continue;
    const Tensor& k = s.k[i].value();
    for (std::size_t j = 0; j < y5.size(); ++j) {
      s.error[j] += h * berr[i] * (k[j] - base[j]);
    }
  }
  s.y4 = y5;
  for (std::size_t j = 0; j < y5.size(); ++j) s.y4[j] -= s.error[j];
  return s;
}

double error_norm(const Tensor& error, const Tensor& y0, const Tensor& y1,
                  double rtol, double atol) {
  if (error.size() == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < error.size(); ++i) {
    const double tol = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double r = error[i] / tol;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(error.size()));
}

std::array<double, 7> dopri5_dense_weights(double theta) {
  std::array<double, 7> w{};
  const double t2 = theta * theta, t3 = t2 * theta, t4 = t3 * theta;
  for (std::size_t i = 0; i < 7; ++i) {
    w[i] = P[i][0] * theta + P[i][1] * t2 + P[i][2] * t3 + P[i][3] * t4;
  }
  return w;
}

SolveResult odesolve(const Dynamics& f, Var z0, std::span<const double> times,
                     const SolverConfig& config) {
  config.validate();
  if (times.empty()) throw SolverError("odesolve: no requested times");
  double sign = 1.0;
  const std::vector<double> tau = to_solver_time(times, sign);
  if (tau.size() == 1) {
    SolveResult r;
    r.states.push_back(z0);
    return r;
  }
  std::size_t nfe = 0;
  const CountingDynamics counted{f, sign, &nfe};
  SolveResult r;
  try {
    r = config.method == Method::dopri5 ? solve_dopri5(counted, z0, tau, config, nfe)
                                        : solve_fixed(counted, z0, tau, config, nfe);
  } catch (MaxStepsExceeded&) {
    throw;
  }
  r.nfe = nfe;
  return r;
}

OdeDynamics::OdeDynamics(ad::Mlp net) : net_(std::move(net)) {
  if (net_.in_dim() != net_.out_dim()) {
    throw std::invalid_argument("ode dynamics: input width " +
                                std::to_string(net_.in_dim()) +
                                " differs from output width " +
                                std::to_string(net_.out_dim()));
  }
  if (net_.spec().widths.size() > 2 && net_.spec().hidden != ad::Activation::tanh) {
    throw std::invalid_argument("ode dynamics: hidden activation must be tanh");
  }
}

Dynamics OdeDynamics::fn() const {
  return [this](Var z) { return net_(z); };
}

namespace {

NfeRow run_cost(const Dynamics& f, const Tensor& z0, std::span<const double> times,
                const SolverConfig& config, const ad::ParameterStore* store) {
  ad::Graph g(store);
  Var z = ad::constant(g, z0);
  const SolveResult r = odesolve(f, z, times, config);
  return NfeRow{times.back(), times.size(), r.nfe, r.accepted, r.rejected};
}

}  // namespace

std::vector<NfeRow> nfe_study(const Dynamics& f, const Tensor& z0,
                              std::span<const double> base,
                              std::span<const std::size_t> counts,
                              const SolverConfig& config,
                              const ad::ParameterStore* store) {
  std::vector<NfeRow> rows;
  for (std::size_t count : counts) {
    if (count == 0 || count > base.size()) {
      throw std::invalid_argument("nfe_study: count " + std::to_string(count) +
                                  " outside [1, " + std::to_string(base.size()) + "]");
    }
    std::vector<double> picked;
    if (count == 1) {
      picked.push_back(base.front());
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t idx = (i * (base.size() - 1) + (count - 1) / 2) / (count - 1);
        const double t = base[std::min(idx, base.size() - 1)];
        if (picked.empty() || t != picked.back()) picked.push_back(t);
      }
      picked.back() = base.back();
    }
    NfeRow row = run_cost(f, z0, picked, config, store);
    row.requested_points = count;
    rows.push_back(row);
  }
  return rows;
}

std::vector<NfeRow> nfe_interval_study(const Dynamics& f, const Tensor& z0,
                                       std::span<const double> base,
                                       std::span<const std::size_t> end_indices,
                                       const SolverConfig& config,
                                       const ad::ParameterStore* store) {
  std::vector<NfeRow> rows;
  for (std::size_t end : end_indices) {
    if (end >= base.size()) {
      throw std::invalid_argument("nfe_interval_study: end index out of range");
    }
    rows.push_back(run_cost(f, z0, base.subspan(0, end + 1), config, store));
  }
  return rows;
}

void write_nfe_csv(std::ostream& out, std::span<const NfeRow> rows) {
  out << "requested_points,nfe,accepted,rejected\n";
  for (const auto& r : rows) {
    out << r.requested_points << ',' << r.nfe << ',' << r.accepted << ','
        << r.rejected << '\n';
  }
}

void write_nfe_interval_csv(std::ostream& out, std::span<const NfeRow> rows) {
  out << "end_time,requested_points,nfe,accepted,rejected\n";
  for (const auto& r : rows) {
    out << r.end_time << ',' << r.requested_points << ',' << r.nfe << ','
        << r.accepted << ',' << r.rejected << '\n';
  }
}

}  // namespace ctseq::ode
