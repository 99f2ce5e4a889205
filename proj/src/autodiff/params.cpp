// SPDX-License-Identifier: Apache-2.0
#include "ctseq/autodiff/params.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace ctseq::ad {

ParamId ParameterStore::add(std::string name, Tensor init) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return ParamId{static_cast<std::uint32_t>(values_.size() - 1)};
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::optional<ParamId> ParameterStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return ParamId{static_cast<std::uint32_t>(i)};
  }
  return std::nullopt;
}

std::vector<ParamId> ParameterStore::ids() const {
  std::vector<ParamId> out(values_.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = ParamId{static_cast<std::uint32_t>(i)};
  }
  return out;
}

void save_checkpoint(std::ostream& out, const ParameterStore& store,
                     std::string_view meta) {
  if (meta.find('\n') != std::string_view::npos) {
    throw CheckpointError("checkpoint meta must be a single line");
  }
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "meta " << meta << '\n';
  out << "tensors " << store.size() << '\n';
  char buf[64];
  for (ParamId id : store.ids()) {
    const Tensor& t = store.value(id);
    out << store.name(id) << ' ' << t.rank();
    for (std::size_t d : t.shape()) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%a", t[i]);
      if (i) out << ' ';
      out << buf;
    }
    out << '\n';
  }
  out << "end\n";
}

void save_checkpoint(const std::string& path, const ParameterStore& store,
                     std::string_view meta) {
  std::ofstream f(path);
  if (!f) throw CheckpointError("cannot open for writing: " + path);
  save_checkpoint(f, store, meta);
  if (!f) throw CheckpointError("write failed: " + path);
}

Checkpoint read_checkpoint(std::istream& in) {
  Checkpoint ck;
  std::string line;
  auto fail = [](const std::string& why) {
    throw CheckpointError("checkpoint: " + why);
  };
  if (!std::getline(in, line)) fail("empty stream");
  {
    std::istringstream hs(line);
    std::string magic;
    int version = 0;
    hs >> magic >> version;
    if (magic != kCheckpointMagic) fail("bad magic '" + magic + "'");
    if (version != kCheckpointVersion) {
      fail("unsupported version " + std::to_string(version));
    }
  }
  if (!std::getline(in, line) || line.rfind("meta", 0) != 0) fail("missing meta line");
  ck.meta = line.size() > 5 ? line.substr(5) : std::string();
  if (!std::getline(in, line) || line.rfind("tensors ", 0) != 0) fail("missing tensor count");
  const std::size_t count = std::stoul(line.substr(8));
  for (std::size_t k = 0; k < count; ++k) {
    if (!std::getline(in, line)) fail("truncated header for tensor " + std::to_string(k));
    std::istringstream hs(line);
    std::string name;
    std::size_t rank = 0;
    hs >> name >> rank;
    Shape shape(rank);
    for (auto& d : shape) hs >> d;
    if (!hs) fail("malformed header: " + line);
    if (!std::getline(in, line)) fail("truncated values for " + name);
    std::vector<double> values;
    values.reserve(shape_size(shape));
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      char* stop = nullptr;
      const double v = std::strtod(p, &stop);
      if (stop == p) fail("bad value in " + name);
      values.push_back(v);
      p = stop;
    }
    if (values.size() != shape_size(shape)) {
      fail(name + ": expected " + std::to_string(shape_size(shape)) +
           " values, got " + std::to_string(values.size()));
    }
    ck.tensors.emplace_back(name, Tensor(std::move(shape), std::move(values)));
  }
  if (!std::getline(in, line) || line != "end") fail("missing end marker");
  return ck;
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CheckpointError("cannot open: " + path);
  return read_checkpoint(f);
}

void load_into(const Checkpoint& ckpt, ParameterStore& store) {
  if (ckpt.tensors.size() != store.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(ckpt.tensors.size()) +
                          " tensors, model expects " + std::to_string(store.size()));
  }
  for (const auto& [name, t] : ckpt.tensors) {
    auto id = store.find(name);
    if (!id) throw CheckpointError("unknown parameter in checkpoint: " + name);
    if (store.value(*id).shape() != t.shape()) {
      throw CheckpointError(name + ": shape " + shape_string(t.shape()) +
                            " does not match model shape " +
                            shape_string(store.value(*id).shape()));
    }
    store.value(*id) = t;
  }
}

}  // namespace ctseq::ad
