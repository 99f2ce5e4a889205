// SPDX-License-Identifier: Apache-2.0
#include "ctseq/autodiff/mlp.hpp"

#include <string>

namespace ctseq::ad {

Mlp Mlp::create(ParameterStore& store, std::string_view prefix, MlpSpec spec,
                std::mt19937_64& rng) {
  if (spec.widths.size() < 2) {
    throw std::invalid_argument("mlp: need at least input and output widths");
  }
  Mlp m;
  std::normal_distribution<double> normal(0.0, spec.init_std);
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    const std::size_t in = spec.widths[l], out = spec.widths[l + 1];
    Tensor w(Shape{in, out});
    for (double& v : w.data()) v = normal(rng);
    const std::string base = std::string(prefix) + ".layer" + std::to_string(l);
    m.weights_.push_back(store.add(base + ".weight", std::move(w)));
    m.biases_.push_back(store.add(base + ".bias", Tensor(Shape{1, out}, 0.0)));
  }
  m.spec_ = std::move(spec);
  return m;
}

Var Mlp::operator()(Var x) const {
  if (x.cols() != in_dim()) {
    throw ShapeError("mlp: input has " + std::to_string(x.cols()) +
                     " columns, network expects " + std::to_string(in_dim()));
  }
  Graph& g = x.graph();
  Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = matmul(h, param(g, weights_[l])) + param(g, biases_[l]);
    const bool last = l + 1 == weights_.size();
    if (!last) {
      switch (spec_.hidden) {
        case Activation::tanh: h = tanh(h); break;
        case Activation::relu: h = relu(h); break;
        case Activation::identity: break;
      }
    } else {
      switch (spec_.output) {
        case OutputActivation::identity: break;
        case OutputActivation::sigmoid: h = sigmoid(h); break;
        case OutputActivation::softplus: h = softplus(h); break;
        case OutputActivation::tanh: h = tanh(h); break;
        case OutputActivation::exp: h = exp(h); break;
      }
    }
  }
  return h;
}

void Mlp::zero_output_layer(ParameterStore& store) const {
  store.value(weights_.back()).fill(0.0);
  store.value(biases_.back()).fill(0.0);
}

void Mlp::zero_all(ParameterStore& store) const {
  for (ParamId id : weights_) store.value(id).fill(0.0);
  for (ParamId id : biases_) store.value(id).fill(0.0);
}

std::vector<std::size_t> mlp_widths(std::size_t in, std::size_t units,
                                    std::size_t layers, std::size_t out) {
  std::vector<std::size_t> w{in};
  for (std::size_t i = 0; i < layers; ++i) w.push_back(units);
  w.push_back(out);
  return w;
}

Var positive(Var x, PositiveLink link) {
  return link == PositiveLink::exp ? exp(x) : softplus(x);
}

OutputActivation output_activation(PositiveLink link) {
  return link == PositiveLink::exp ? OutputActivation::exp : OutputActivation::softplus;
}

std::string link_name(PositiveLink link) { return link == PositiveLink::exp ? "exp" : "softplus"; }

PositiveLink parse_link(const std::string& name) {
  if (name == "softplus") return PositiveLink::softplus;
  if (name == "exp") return PositiveLink::exp;
  throw std::invalid_argument("unknown positive link '" + name + "' (softplus|exp)");
}

}  // namespace ctseq::ad
