#include "samplecrit/batching.hpp"

#include <algorithm>
#include <numeric>

#include "samplecrit/error.hpp"

namespace samplecrit {

PositionTable flatten(const Corpus& corpus, std::size_t order, TokenId bos) {
  if (order == 0) throw Error("context order must be positive");
  PositionTable t;
  t.order = order;
  const std::size_t n = corpus.num_positions();
  t.contexts.reserve(n * order);
  t.targets.reserve(n);
  for (const auto& seq : corpus.sequences) {
    for (std::size_t pos = 1; pos < seq.size(); ++pos) {
      auto ctx = context_at(seq, pos, order, bos);
      t.contexts.insert(t.contexts.end(), ctx.begin(), ctx.end());
      t.targets.push_back(seq[pos]);
    }
  }
  return t;
}

BatchIterator::BatchIterator(const PositionTable& positions, std::size_t batch_size,
                             std::uint64_t seed, bool shuffle)
    : positions_(&positions), batch_size_(batch_size), shuffle_(shuffle), rng_(seed) {
  if (batch_size == 0) throw Error("batch size must be positive");
  order_.resize(positions.size());
}

std::size_t BatchIterator::batches_per_epoch() const {
  return (positions_->size() + batch_size_ - 1) / batch_size_;
}

void BatchIterator::start_epoch() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle_) {
    for (std::size_t i = order_.size(); i > 1; --i) {
      std::swap(order_[i - 1], order_[rng_.below(i)]);
    }
  }
  cursor_ = 0;
  fresh_ = false;
}

bool BatchIterator::next(TrainingBatch& batch) {
  if (fresh_) start_epoch();
  if (cursor_ >= order_.size()) {
    fresh_ = true;
    return false;
  }
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  const std::size_t m = positions_->order;
  batch.order = m;
  batch.contexts.clear();
  batch.targets.clear();
  for (std::size_t i = cursor_; i < end; ++i) {
    auto ctx = positions_->context(order_[i]);
    batch.contexts.insert(batch.contexts.end(), ctx.begin(), ctx.end());
    batch.targets.push_back(positions_->targets[order_[i]]);
  }
  cursor_ = end;
  return true;
}

std::vector<double> empirical_posterior(const Corpus& corpus, std::span<const TokenId> context,
                                        std::size_t vocab_size, TokenId bos) {
  std::vector<double> counts(vocab_size, 0.0);
  double total = 0.0;
  for (const auto& seq : corpus.sequences) {
    for (std::size_t pos = 1; pos < seq.size(); ++pos) {
      auto ctx = context_at(seq, pos, context.size(), bos);
      if (std::equal(ctx.begin(), ctx.end(), context.begin())) {
        counts.at(static_cast<std::size_t>(seq[pos])) += 1.0;
        total += 1.0;
      }
    }
  }
  if (total == 0.0) throw Error("unseen context");
  for (auto& c : counts) c /= total;
  return counts;
}

}  // namespace samplecrit
