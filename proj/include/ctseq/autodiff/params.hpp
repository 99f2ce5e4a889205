// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctseq/autodiff/graph.hpp"
#include "ctseq/autodiff/tensor.hpp"

namespace ctseq::ad {

/// Named, ordered collection of trainable tensors. Ids are dense indices in
/// insertion order, which makes gradient reduction order deterministic.
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor init);

  std::size_t size() const { return values_.size(); }
  std::size_t total_elements() const;

  Tensor& value(ParamId id) { return values_.at(id.index); }
  const Tensor& value(ParamId id) const { return values_.at(id.index); }
  const std::string& name(ParamId id) const { return names_.at(id.index); }
  std::optional<ParamId> find(std::string_view name) const;

  std::vector<ParamId> ids() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kCheckpointMagic = "CTSEQ-PARAMS";
inline constexpr int kCheckpointVersion = 1;

/// Text checkpoint, one tensor per two lines:
///
///   CTSEQ-PARAMS 1
///   meta <one line of free text, typically JSON>
///   tensors <count>
///   <name> <rank> <dim0> ... <dimN-1>
///   <values as C99 hex floats, space separated>
///   ...
///   end
///
/// Hex floats make save/load bit-exact.
void save_checkpoint(std::ostream& out, const ParameterStore& store,
                     std::string_view meta = {});
void save_checkpoint(const std::string& path, const ParameterStore& store,
                     std::string_view meta = {});

struct Checkpoint {
  std::string meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint(const std::string& path);

/// Copies checkpoint tensors into a store with the same names and shapes.
/// Missing names, extra names, or shape differences raise CheckpointError.
void load_into(const Checkpoint& ckpt, ParameterStore& store);

}  // namespace ctseq::ad
