// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include "ctseq/autodiff/graph.hpp"

int main(int argc, char** argv) {
  ctseq::ad::Graph::set_default_strict(true);
  doctest::Context ctx;
  ctx.applyCommandLine(argc, argv);
  return ctx.run();
}
