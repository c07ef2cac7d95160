#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace samplecrit {

using TokenId = std::int32_t;

inline constexpr std::string_view kBos = "<s>";
inline constexpr std::string_view kEos = "</s>";
inline constexpr std::string_view kUnk = "<unk>";

/// Token <-> id map. Ids are ranked by descending count with ties broken
/// lexicographically. The reserved tokens are always present; `<s>` only
/// ever appears as context, so it carries a count of zero.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Builds from (token, count) pairs. Reserved tokens are added if missing.
  /// Duplicate tokens are an error.
  static Vocabulary from_counts(std::vector<std::pair<std::string, std::uint64_t>> counts);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::uint64_t count(TokenId id) const { return counts_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }

  /// Id of `tok`, or the `<unk>` id when out of vocabulary.
  TokenId id_of(std::string_view tok) const;
  bool contains(std::string_view tok) const;

  TokenId bos() const { return bos_; }
  TokenId eos() const { return eos_; }
  TokenId unk() const { return unk_; }

  void save(const std::filesystem::path& path) const;
  /// Reads one token per line, optionally followed by a tab and a count.
  /// Line order is taken as the id order.
  static Vocabulary load(const std::filesystem::path& path);

 private:
  void index();

  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, TokenId> ids_;
  TokenId bos_ = -1;
  TokenId eos_ = -1;
  TokenId unk_ = -1;
};

/// Builds a vocabulary from whitespace-tokenized lines. `max_size` counts the
/// reserved tokens; the most frequent words fill the remaining slots and
/// everything else maps to `<unk>`. Tokens below `min_count` are dropped.
Vocabulary build_vocab(std::span<const std::string> lines, std::size_t max_size,
                       std::uint64_t min_count = 1);

/// Token-id sequences, each wrapped in `<s>` ... `</s>`.
struct Corpus {
  std::vector<std::vector<TokenId>> sequences;

  /// Number of predicted positions (everything after the leading `<s>`).
  std::size_t num_positions() const;
};

/// Encodes whitespace-tokenized lines. Empty lines are skipped.
Corpus encode(const Vocabulary& vocab, std::span<const std::string> lines);

std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Writes one sequence per line without the sentence markers.
void save_corpus(const Vocabulary& vocab, const Corpus& corpus,
                 const std::filesystem::path& path);

/// History of `order` ids preceding position `pos` of `seq`, left-padded with
/// `bos`. `pos` is the index of the predicted token (>= 1).
std::vector<TokenId> context_at(std::span<const TokenId> seq, std::size_t pos,
                                std::size_t order, TokenId bos);

}  // namespace samplecrit
