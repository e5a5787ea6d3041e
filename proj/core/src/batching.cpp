#include "tridira/batching.hpp"

#include <algorithm>
#include <numeric>

#include "tridira/rng.hpp"

namespace tridira {

BatchIterator::BatchIterator(const std::vector<UtteranceRecord>& records, int batch_size,
                             std::uint64_t seed, bool shuffle)
    : records_(&records), batch_size_(batch_size) {
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (records.empty()) throw ValidationError("empty dataset: no records to batch");
  order_.resize(records.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (shuffle) {
    rng::Stream stream(seed, 0);
    stream.shuffle(order_);
  }
}

int BatchIterator::num_batches() const {
  const auto n = static_cast<int>(order_.size());
  return (n + batch_size_ - 1) / batch_size_;
}

std::optional<UtteranceBatch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(cursor_ + static_cast<std::size_t>(batch_size_), order_.size());
  std::vector<int> indices(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                           order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return assemble_batch(*records_, indices);
}

UtteranceBatch assemble_batch(const std::vector<UtteranceRecord>& records,
                              const std::vector<int>& indices) {
  if (indices.empty()) throw ValidationError("cannot assemble an empty batch");
  const int batch = static_cast<int>(indices.size());

  UtteranceBatch out;
  out.labels.resize(batch);
  out.ids.reserve(indices.size());
  for (int i = 0; i < batch; ++i) {
    const auto& rec = records.at(static_cast<std::size_t>(indices[static_cast<std::size_t>(i)]));
    out.labels(i) = rec.label;
    out.ids.push_back(rec.id);
  }

  for (auto m : kModalities) {
    auto& block = out.blocks[index_of(m)];
    int tau_max = 0;
    int dim = 0;
    for (int idx : indices) {
      const auto& seq = records.at(static_cast<std::size_t>(idx)).features[index_of(m)];
      tau_max = std::max(tau_max, seq.length());
      if (dim == 0) {
        dim = seq.dim();
      } else if (dim != seq.dim()) {
        throw ShapeError(std::string("inconsistent ") + to_string(m) + " dims within batch");
      }
    }
    block.tau = tau_max;
    block.dim = dim;
    block.values = Matrix::Zero(static_cast<Eigen::Index>(batch) * tau_max, dim);
    block.mask.setZero(batch, tau_max);
    for (int i = 0; i < batch; ++i) {
      const auto& seq =
          records.at(static_cast<std::size_t>(indices[static_cast<std::size_t>(i)]))
              .features[index_of(m)];
      for (int t = 0; t < seq.length(); ++t) {
        block.values.row(static_cast<Eigen::Index>(i) * tau_max + t) =
            seq.values.row(t).cast<double>();
        block.mask(i, t) = seq.mask[static_cast<std::size_t>(t)] ? 1 : 0;
      }
    }
  }
  return out;
}

}  // namespace tridira
