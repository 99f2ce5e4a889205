// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ctseq/train/trainer.hpp"

namespace ctseq::train {

/// One model row of the toy MSE table.
struct ToyRow {
  std::string label;
  ModelKind kind;
  models::EncoderKind encoder = models::EncoderKind::ode_rnn;
};

/// RNN dt, RNN-Impute, RNN-Decay, RNN GRU-D, ODE-RNN, RNN-VAE,
/// Latent ODE (RNN enc.), Latent ODE (ODE enc.).
const std::vector<ToyRow>& toy_table_rows();

/// Columns: interpolation then extrapolation, each at these percentages.
inline const std::vector<int> kToyPercents = {10, 20, 30, 50};

/// Seed of one table cell: derive_seed(base, 16 * row + column, repeat).
std::uint64_t toy_cell_seed(std::uint64_t base, std::size_t row, std::size_t column,
                            std::size_t repeat);

/// Default base config of the toy table: toy data on one shared time grid,
/// fixed-step Euler in the recognition ODE-RNN and reduced epochs.
RunConfig desk_scale_config();

/// Run config for a cell: `base` with the row's model, the task and the
/// observed fraction filled in.
RunConfig toy_cell_config(const RunConfig& base, const ToyRow& row, data::Task task,
                          double fraction, std::uint64_t seed);

struct ToyCellResult {
  std::size_t row = 0;
  std::size_t column = 0;
  std::size_t repeat = 0;
  double mse = 0.0;  // test MSE after the last epoch
};

/// Mean MSE per cell, rows x 8, written as CSV with a `model` column and
/// one column per (task, percent).
void write_toy_table(std::ostream& out, const std::vector<ToyCellResult>& cells);
/// One line per trained cell: `model,task,percent,repeat,mse`.
void write_toy_cells(std::ostream& out, const std::vector<ToyCellResult>& cells);

}  // namespace ctseq::train
