#pragma once

// Online FIFO queue of teacher pixel embeddings.

#include "rdd/features.hpp"
#include "rdd/matrix.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace rdd {

class PixelQueue {
  public:
    PixelQueue() = default;
    PixelQueue(int capacity, int dim);

    int capacity() const { return storage_.rows(); }
    int dim() const { return storage_.cols(); }
    int count() const { return count_; }
    int cursor() const { return cursor_; }
    bool is_ready(int v) const { return count_ >= v; }

    /// Writes K rows of a normalised teacher map, chosen uniformly without
    /// replacement, at the cursor. Oldest entries are overwritten first.
    void push(const FeatureMap& teacher, int k, std::mt19937_64& rng);
    /// V distinct valid rows chosen uniformly without replacement (V x C).
    /// Throws NotReady when V exceeds the number of valid rows.
    Matrix sample(int v, std::mt19937_64& rng) const;

    /// Valid rows in insertion order, oldest first.
    Matrix snapshot() const;
    /// Insertion sequence numbers (1-based) of the valid rows, oldest first.
    std::vector<std::uint64_t> insertion_ids() const;

    void reset();

    const Matrix& storage() const { return storage_; }
    const std::vector<std::uint64_t>& slot_ids() const { return ids_; }
    std::uint64_t pushed() const { return pushed_; }
    /// Rebuilds a queue from serialised parts; validates consistency.
    static PixelQueue restore(Matrix storage, std::vector<std::uint64_t> ids, int count, int cursor,
                              std::uint64_t pushed);

  private:
    Matrix storage_;
    std::vector<std::uint64_t> ids_;
    int count_ = 0;
    int cursor_ = 0;
    std::uint64_t pushed_ = 0;
};

} // namespace rdd
