// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctseq/autodiff/graph.hpp"
#include "ctseq/autodiff/mlp.hpp"

namespace ctseq::ode {

using ad::Tensor;
using ad::Var;

/// Right-hand side of an autonomous system dz/dt = f(z). Maps a [rows, dim]
/// state to a [rows, dim] derivative on the state's graph.
using Dynamics = std::function<Var(Var)>;

enum class Method { euler, rk4, dopri5 };

std::string method_name(Method m);
Method parse_method(const std::string& name);

/// Records the accepted step sizes of successive adaptive solves, then plays
/// them back. Replaying freezes the step sequence, which is what a finite
/// difference check of an adaptive solve needs.
struct StepSchedule {
  enum class Mode { record, replay };
  Mode mode = Mode::record;
  std::vector<std::vector<double>> solves;
  std::size_t cursor = 0;

  void start_replay() {
    mode = Mode::replay;
    cursor = 0;
  }
};

struct SolverConfig {
  Method method = Method::dopri5;
  double rtol = 1e-3;
  double atol = 1e-4;
  /// Adaptive: first trial step. 0 picks one from the initial state and
  /// slope (one extra dynamics evaluation).
  /// Fixed-step methods: the maximum step size (0 means 1e-2 times the
  /// solve interval).
  double initial_step = 0.0;
  std::size_t max_steps = 100000;
  double safety = 0.9;
  double min_factor = 0.2;
  double max_factor = 10.0;
  std::shared_ptr<StepSchedule> schedule;

  void validate() const;
};

struct SolveResult {
  std::vector<Var> states;  // one [rows, dim] state per requested time
  std::size_t nfe = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;

  /// [num times, dim] for single-row states; multi-row states are stacked
  /// time-major to [num times * rows, dim].
  Tensor stacked() const;
};

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MaxStepsExceeded : public SolverError {
 public:
  MaxStepsExceeded(const std::string& what, SolveResult partial)
      : SolverError(what), partial_(std::move(partial)) {}
  const SolveResult& partial() const { return partial_; }

 private:
  SolveResult partial_;
};

/// Solves the IVP z(times[0]) = z0 and returns z at every requested time.
/// Times must be strictly monotone; decreasing times integrate backward by
/// solving the negated system in reversed time. The adaptive method never
/// shortens a step to land on a requested time: intermediate outputs come
/// from the dense-output interpolant, so the step sequence (and nfe) depends
/// only on the interval and the dynamics.
SolveResult odesolve(const Dynamics& f, Var z0, std::span<const double> times,
                     const SolverConfig& config);

Var euler_step(const Dynamics& f, Var z, double dt);
Var rk4_step(const Dynamics& f, Var z, double dt);

struct Dopri5Step {
  Var y5;                 // fifth-order solution
  Tensor y4;              // embedded fourth-order solution (values only)
  Tensor error;           // y5 - y4
  std::array<Var, 7> k;   // stage derivatives; k[6] = f(y5) (FSAL)
};

/// One Dormand-Prince step from z with known slope k1 = f(z). Costs six
/// dynamics evaluations; k[6] becomes the next step's k1.
Dopri5Step dopri5_step(const Dynamics& f, Var z, Var k1, double dt);

/// Mixed RMS error norm sqrt(mean((e / (atol + rtol * max(|y0|, |y1|)))^2)).
double error_norm(const Tensor& error, const Tensor& y0, const Tensor& y1,
                  double rtol, double atol);

/// Dense-output weights b_i(theta) for theta in [0, 1]; the interpolated
/// state is y0 + h * sum_i b_i(theta) k_i.
std::array<double, 7> dopri5_dense_weights(double theta);

/// Time-invariant neural dynamics: an MLP from state to derivative with tanh
/// hidden layers and equal input and output widths.
class OdeDynamics {
 public:
  OdeDynamics() = default;
  explicit OdeDynamics(ad::Mlp net);

  Var operator()(Var z) const { return net_(z); }
  Dynamics fn() const;
  const ad::Mlp& net() const { return net_; }
  std::size_t dim() const { return net_.in_dim(); }

 private:
  ad::Mlp net_;
};

struct NfeRow {
  double end_time = 0.0;
  std::size_t requested_points = 0;
  std::size_t nfe = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

/// For each count, solves over the full [base.front(), base.back()] interval
/// with `count` requested points (evenly spaced picks from `base`, always
/// including both endpoints) and records the cost. `store` backs any
/// parameters the dynamics read.
std::vector<NfeRow> nfe_study(const Dynamics& f, const Tensor& z0,
                              std::span<const double> base_times,
                              std::span<const std::size_t> counts,
                              const SolverConfig& config = {},
                              const ad::ParameterStore* store = nullptr);

/// Solves over [base[0], base[i]] for each listed end index i, requesting
/// every base time in that prefix.
std::vector<NfeRow> nfe_interval_study(const Dynamics& f, const Tensor& z0,
                                       std::span<const double> base_times,
                                       std::span<const std::size_t> end_indices,
                                       const SolverConfig& config = {},
                                       const ad::ParameterStore* store = nullptr);

/// CSV with header `requested_points,nfe,accepted,rejected`.
void write_nfe_csv(std::ostream& out, std::span<const NfeRow> rows);
/// CSV with header `end_time,requested_points,nfe,accepted,rejected`.
void write_nfe_interval_csv(std::ostream& out, std::span<const NfeRow> rows);

}  // namespace ctseq::ode
