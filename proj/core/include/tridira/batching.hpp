#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tridira/types.hpp"

namespace tridira {

/// Single-consumer iterator over padded batches. The index order is fixed at
/// construction (seeded Fisher-Yates when shuffling), so identical seeds give
/// identical batch sequences. The final partial batch is retained.
class BatchIterator {
 public:
  BatchIterator(const std::vector<UtteranceRecord>& records, int batch_size, std::uint64_t seed,
                bool shuffle);

  std::optional<UtteranceBatch> next();
  void reset() { cursor_ = 0; }
  int num_batches() const;
  const std::vector<int>& order() const { return order_; }

 private:
  const std::vector<UtteranceRecord>* records_;
  int batch_size_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
};

UtteranceBatch assemble_batch(const std::vector<UtteranceRecord>& records,
                              const std::vector<int>& indices);

}  // namespace tridira
