#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "tridira/autodiff.hpp"
#include "tridira/rng.hpp"
#include "tridira/types.hpp"

namespace tridira {

struct ParamId {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

/// Ordered, named collection of trainable tensors. Registration order is the
/// canonical order for checkpoints, gradients, and optimizer state.
class ParameterStore {
 public:
  ParamId add(const std::string& name, Matrix value);

  int count() const { return static_cast<int>(entries_.size()); }
  const std::string& name(int idx) const { return entries_.at(static_cast<std::size_t>(idx)).name; }
  Matrix& value(int idx) { return entries_.at(static_cast<std::size_t>(idx)).value; }
  const Matrix& value(int idx) const {
    return entries_.at(static_cast<std::size_t>(idx)).value;
  }
  Matrix& value(ParamId id) { return value(id.idx); }
  const Matrix& value(ParamId id) const { return value(id.idx); }
  int find(const std::string& name) const;

  /// FNV-1a over the raw parameter bytes; used to prove read-only access.
  std::uint64_t content_hash() const;

 private:
  struct Entry {
    std::string name;
    Matrix value;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

namespace init {
Matrix glorot_uniform(int rows, int cols, rng::Stream& stream);
Matrix normal(int rows, int cols, double stddev, rng::Stream& stream);
Matrix zeros(int rows, int cols);
Matrix ones(int rows, int cols);
}  // namespace init

/// Per-forward-pass binding of parameters onto a tape. `trainable` (when set)
/// flags which parameters receive gradients; detached bindings never do.
struct GraphContext {
  ad::Tape& tape;
  ParameterStore& params;
  const std::vector<char>* trainable = nullptr;
  bool training = false;
  rng::Stream* dropout_rng = nullptr;

  explicit GraphContext(ad::Tape& t, ParameterStore& p) : tape(t), params(p) {
    bound_.assign(static_cast<std::size_t>(p.count()), ad::Value{});
  }

  ad::Value use(ParamId id);
  ad::Value detached(ParamId id);

  bool is_trainable(ParamId id) const;

  /// Adds d(loss)/d(param) into grads (indexed like the store) for every
  /// bound trainable parameter. Call after tape.backward().
  void accumulate_grads(std::vector<Matrix>& grads) const;

 private:
  std::vector<ad::Value> bound_;
};

}  // namespace tridira
