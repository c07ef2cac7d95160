#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "samplecrit/rng.hpp"
#include "samplecrit/vocab.hpp"

namespace samplecrit {

/// Every predicted position of a corpus as (context, target), contexts
/// flattened row-major with `order` ids per row.
struct PositionTable {
  std::size_t order = 0;
  std::vector<TokenId> contexts;
  std::vector<TokenId> targets;

  std::size_t size() const { return targets.size(); }
  std::span<const TokenId> context(std::size_t i) const {
    return {contexts.data() + i * order, order};
  }
};

PositionTable flatten(const Corpus& corpus, std::size_t order, TokenId bos);

struct TrainingBatch {
  std::size_t order = 0;
  std::vector<TokenId> contexts;  // size() * order
  std::vector<TokenId> targets;

  std::size_t size() const { return targets.size(); }
  std::span<const TokenId> context(std::size_t i) const {
    return {contexts.data() + i * order, order};
  }
};

/// Epoch-wise iteration over all positions in batches of `batch_size`; the
/// final batch may be smaller. Each epoch is reshuffled from a stream seeded
/// once at construction, so the batch sequence is a function of the seed.
class BatchIterator {
 public:
  BatchIterator(const PositionTable& positions, std::size_t batch_size, std::uint64_t seed,
                bool shuffle = true);

  /// Fills `batch` and returns true, or returns false at the end of an epoch
  /// (after which the next call starts a new, reshuffled epoch).
  bool next(TrainingBatch& batch);

  std::size_t batches_per_epoch() const;

 private:
  void start_epoch();

  const PositionTable* positions_;
  std::size_t batch_size_;
  bool shuffle_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  bool fresh_ = true;
};

/// Relative successor frequencies of `context` (length = context order, with
/// `<s>` left-padding as produced by context_at). Throws "unseen context".
std::vector<double> empirical_posterior(const Corpus& corpus, std::span<const TokenId> context,
                                        std::size_t vocab_size, TokenId bos);

}  // namespace samplecrit
