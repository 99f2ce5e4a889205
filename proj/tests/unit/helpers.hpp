// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>

#include "ctseq/autodiff/tensor.hpp"

namespace testutil {

inline ctseq::ad::Tensor uniform(ctseq::ad::Shape shape, std::mt19937_64& rng,
                                 double lo = -1.0, double hi = 1.0) {
  ctseq::ad::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

}  // namespace testutil
