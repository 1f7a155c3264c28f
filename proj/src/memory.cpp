#include "rdd/memory.hpp"

#include "rdd/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rdd {

PixelQueue::PixelQueue(int capacity, int dim) : storage_(capacity, dim), ids_(capacity, 0) {
    RDD_REQUIRE(capacity > 0 && dim > 0, "queue capacity and dimension must be positive");
}

void PixelQueue::push(const FeatureMap& teacher, int k, std::mt19937_64& rng) {
    RDD_REQUIRE(teacher.origin == Origin::teacher, "only teacher embeddings may enter the queue");
    RDD_REQUIRE(teacher.normalized, "queue embeddings must be l2-normalised");
    RDD_REQUIRE(teacher.channels() == dim(), "embedding dimension " + std::to_string(teacher.channels()) +
                                                 " does not match queue dimension " + std::to_string(dim()));
    RDD_REQUIRE(k >= 1 && k <= teacher.pixels(), "cannot push " + std::to_string(k) + " of " +
                                                     std::to_string(teacher.pixels()) + " pixels");
    RDD_REQUIRE(k <= capacity(), "push size exceeds queue capacity");

    std::vector<int> all(teacher.pixels());
    std::iota(all.begin(), all.end(), 0);
    std::vector<int> chosen;
    chosen.reserve(k);
    std::sample(all.begin(), all.end(), std::back_inserter(chosen), k, rng);
    for (int p : chosen) {
        const auto src = teacher.data.row(p);
        std::copy(src.begin(), src.end(), storage_.row(cursor_).begin());
        ids_[cursor_] = ++pushed_;
        cursor_ = (cursor_ + 1) % capacity();
        count_ = std::min(count_ + 1, capacity());
    }
}

Matrix PixelQueue::sample(int v, std::mt19937_64& rng) const {
    RDD_REQUIRE(v >= 1, "sample size must be positive");
    if (v > count_) {
        throw NotReady("PixelQueue::sample: requested " + std::to_string(v) + " embeddings but only " +
                       std::to_string(count_) + " are stored");
    }
    // Valid rows occupy slots [0, count) until the queue is full, then all slots.
    std::vector<int> slots(count_);
    std::iota(slots.begin(), slots.end(), 0);
    std::vector<int> chosen;
    chosen.reserve(v);
    std::sample(slots.begin(), slots.end(), std::back_inserter(chosen), v, rng);
    std::shuffle(chosen.begin(), chosen.end(), rng);
    Matrix e(v, dim());
    for (int i = 0; i < v; ++i) {
        const auto src = storage_.row(chosen[i]);
        std::copy(src.begin(), src.end(), e.row(i).begin());
    }
    return e;
}

Matrix PixelQueue::snapshot() const {
    Matrix out(count_, dim());
    const int start = count_ < capacity() ? 0 : cursor_;
    for (int i = 0; i < count_; ++i) {
        const auto src = storage_.row((start + i) % capacity());
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

std::vector<std::uint64_t> PixelQueue::insertion_ids() const {
    std::vector<std::uint64_t> out(count_);
    const int start = count_ < capacity() ? 0 : cursor_;
    for (int i = 0; i < count_; ++i) out[i] = ids_[(start + i) % capacity()];
    return out;
}

void PixelQueue::reset() {
    std::fill(storage_.vec().begin(), storage_.vec().end(), 0.0);
    std::fill(ids_.begin(), ids_.end(), 0);
    count_ = 0;
    cursor_ = 0;
    pushed_ = 0;
}

PixelQueue PixelQueue::restore(Matrix storage, std::vector<std::uint64_t> ids, int count, int cursor,
                               std::uint64_t pushed) {
    RDD_REQUIRE(storage.rows() > 0 && storage.cols() > 0, "empty queue storage");
    RDD_REQUIRE(ids.size() == std::size_t(storage.rows()), "slot id count does not match capacity");
    RDD_REQUIRE(count >= 0 && count <= storage.rows() && cursor >= 0 && cursor < storage.rows(),
                "queue counters out of range");
    RDD_REQUIRE(count == storage.rows() || cursor == count, "partially filled queue must have cursor == count");
    PixelQueue q;
    q.storage_ = std::move(storage);
    q.ids_ = std::move(ids);
    q.count_ = count;
    q.cursor_ = cursor;
    q.pushed_ = pushed;
    return q;
}

} // namespace rdd
