// SPDX-License-Identifier: Apache-2.0
#include "ctseq/train/toy_table.hpp"

#include <charconv>
#include <map>
#include <ostream>

namespace ctseq::train {

const std::vector<ToyRow>& toy_table_rows() {
  static const std::vector<ToyRow> rows = {
      {"RNN dt", ModelKind::rnn_dt},
      {"RNN-Impute", ModelKind::rnn_impute},
      {"RNN-Decay", ModelKind::rnn_decay},
      {"RNN GRU-D", ModelKind::gru_d},
      {"ODE-RNN", ModelKind::ode_rnn},
      {"RNN-VAE", ModelKind::rnn_vae, models::EncoderKind::rnn},
      {"Latent ODE (RNN enc.)", ModelKind::latent_ode, models::EncoderKind::rnn},
      {"Latent ODE (ODE enc.)", ModelKind::latent_ode, models::EncoderKind::ode_rnn},
  };
  return rows;
}

std::uint64_t toy_cell_seed(std::uint64_t base, std::size_t row, std::size_t column,
                            std::size_t repeat) {
  return data::derive_seed(base, 16 * row + column, repeat);
}

RunConfig desk_scale_config() {
  RunConfig c;
  c.toy.shared_times = true;
  c.epochs = 60;
  c.batch_size = 10;
  c.eval_every = 5;
  c.model.encoder_solver.method = ode::Method::euler;
  c.model.encoder_solver.initial_step = 0.02;
  return c;
}

RunConfig toy_cell_config(const RunConfig& base, const ToyRow& row, data::Task task,
                          double fraction, std::uint64_t seed) {
  RunConfig c = base;
  c.model.kind = row.kind;
  c.model.encoder = row.encoder;
  c.model.poisson = false;
  c.task = task;
  c.observed_fraction = fraction;
  c.seed = seed;
  return c;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

void write_toy_table(std::ostream& out, const std::vector<ToyCellResult>& cells) {
  const auto& rows = toy_table_rows();
  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, std::size_t>> acc;
  for (const auto& c : cells) {
    auto& a = acc[{c.row, c.column}];
    a.first += c.mse;
    a.second += 1;
  }
  out << "model";
  for (const char* task : {"interp", "extrap"}) {
    for (int p : kToyPercents) out << ',' << task << '_' << p;
  }
  out << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out << '"' << rows[r].label << '"';
    for (std::size_t c = 0; c < 2 * kToyPercents.size(); ++c) {
      out << ',';
      const auto it = acc.find({r, c});
      if (it != acc.end()) out << fmt(it->second.first / static_cast<double>(it->second.second));
    }
    out << '\n';
  }
}

void write_toy_cells(std::ostream& out, const std::vector<ToyCellResult>& cells) {
  const auto& rows = toy_table_rows();
  const std::size_t P = kToyPercents.size();
  out << "model,task,percent,repeat,mse\n";
  for (const auto& c : cells) {
    out << '"' << rows[c.row].label << "\"," << (c.column < P ? "interp" : "extrap") << ','
        << kToyPercents[c.column % P] << ',' << c.repeat << ',' << fmt(c.mse) << '\n';
  }
}

}  // namespace ctseq::train
