// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ctseq/autodiff/graph.hpp"
#include "ctseq/autodiff/params.hpp"

namespace ctseq::ad {

enum class Activation { tanh, relu, identity };
enum class OutputActivation { identity, sigmoid, softplus, tanh, exp };

/// Map from an unconstrained value to a positive one.
enum class PositiveLink { softplus, exp };
Var positive(Var x, PositiveLink link);
OutputActivation output_activation(PositiveLink link);
std::string link_name(PositiveLink link);
PositiveLink parse_link(const std::string& name);

struct MlpSpec {
  std::vector<std::size_t> widths;  // input, hidden..., output
  Activation hidden = Activation::tanh;
  OutputActivation output = OutputActivation::identity;
  double init_std = 0.1;
};

/// Fully connected network. Weights are [in, out], biases [1, out], so a
/// [rows, in] input maps to [rows, out].
class Mlp {
 public:
  Mlp() = default;

  static Mlp create(ParameterStore& store, std::string_view prefix, MlpSpec spec,
                    std::mt19937_64& rng);

  Var operator()(Var x) const;

  std::size_t in_dim() const { return spec_.widths.front(); }
  std::size_t out_dim() const { return spec_.widths.back(); }
  const MlpSpec& spec() const { return spec_; }
  const std::vector<ParamId>& weights() const { return weights_; }
  const std::vector<ParamId>& biases() const { return biases_; }

  /// Zeroes the final layer, making the network output identically zero
  /// (before the output activation).
  void zero_output_layer(ParameterStore& store) const;
  void zero_all(ParameterStore& store) const;

 private:
  MlpSpec spec_;
  std::vector<ParamId> weights_;
  std::vector<ParamId> biases_;
};

/// Widths helper: in -> `layers` hidden layers of `units` -> out.
std::vector<std::size_t> mlp_widths(std::size_t in, std::size_t units,
                                    std::size_t layers, std::size_t out);

}  // namespace ctseq::ad
