#include "tridira/params.hpp"

#include <cmath>
#include <cstring>

namespace tridira {

ParamId ParameterStore::add(const std::string& name, Matrix value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  entries_.push_back(Entry{name, std::move(value)});
  const int idx = static_cast<int>(entries_.size()) - 1;
  index_[name] = idx;
  return ParamId{idx};
}

int ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

std::uint64_t ParameterStore::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& e : entries_) {
    mix(e.name.data(), e.name.size());
    mix(e.value.data(), sizeof(double) * static_cast<std::size_t>(e.value.size()));
  }
  return h;
}

namespace init {

Matrix glorot_uniform(int rows, int cols, rng::Stream& stream) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = stream.uniform(-limit, limit);
  }
  return m;
}

Matrix normal(int rows, int cols, double stddev, rng::Stream& stream) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = stddev * stream.normal();
  }
  return m;
}

Matrix zeros(int rows, int cols) { return Matrix::Zero(rows, cols); }
Matrix ones(int rows, int cols) { return Matrix::Ones(rows, cols); }

}  // namespace init

bool GraphContext::is_trainable(ParamId id) const {
  if (!id.valid()) throw ConfigError("unbound parameter id");
  if (!trainable) return true;
  return (*trainable)[static_cast<std::size_t>(id.idx)] != 0;
}

ad::Value GraphContext::use(ParamId id) {
  auto& slot = bound_[static_cast<std::size_t>(id.idx)];
  if (!slot.valid()) {
    slot = tape.input(params.value(id), is_trainable(id));
  }
  return slot;
}

ad::Value GraphContext::detached(ParamId id) {
  // Fresh constant node: gradients stop here by construction.
  return tape.input(params.value(id), false);
}

void GraphContext::accumulate_grads(std::vector<Matrix>& grads) const {
  if (grads.size() != bound_.size()) {
    grads.assign(bound_.size(), Matrix());
  }
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    if (!bound_[i].valid()) continue;
    if (trainable && !(*trainable)[i]) continue;
    if (!tape.has_grad(bound_[i])) continue;
    const Matrix& g = tape.grad(bound_[i]);
    if (grads[i].size() == 0) {
      grads[i] = g;
    } else {
      grads[i] += g;
    }
  }
}

}  // namespace tridira
