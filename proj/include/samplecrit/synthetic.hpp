#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "samplecrit/matrix.hpp"
#include "samplecrit/vocab.hpp"

namespace samplecrit {

/// Markov chain over `num_states` word symbols. Row `h` of `transition`
/// belongs to the history (s_1, ..., s_order) with index
/// sum_i s_i * C^(order - i), i.e. the most recent state is the least
/// significant digit.
struct MarkovSpec {
  std::size_t order = 1;
  std::size_t num_states = 0;
  Matrix transition;            // C^order x C
  std::vector<double> initial;  // C

  /// Throws unless every row and `initial` are non-negative and sum to one
  /// within 1e-12.
  void validate() const;

  std::size_t num_histories() const { return transition.rows(); }
  /// History index after appending `next` to history `h`.
  std::size_t shift(std::size_t h, std::size_t next) const;

  void save(const std::filesystem::path& path) const;
  static MarkovSpec load(const std::filesystem::path& path);
};

/// Low-rank softmax chain: row logits are zipf_bias_j + strength * <u_h, v_j>
/// with Gaussian factors of dimension `rank`, so the conditional
/// distributions are learnable by a small neural model while the unigram
/// distribution stays Zipf-like.
struct RandomSpecOptions {
  std::size_t rank = 4;
  double strength = 1.0;
  double zipf = 1.0;
};
MarkovSpec random_markov_spec(std::size_t num_states, std::size_t order, std::uint64_t seed,
                              const RandomSpecOptions& opts = {});

/// Spelling of chain state i in generated text.
std::string state_token(std::size_t state);

/// Draws sentences from the chain. The first word comes from `initial`;
/// after each word the sentence ends with probability `end_prob`, otherwise
/// the next word follows the transition row of the current history (missing
/// history slots at a sentence start count as state 0). Stops after
/// `n_tokens` words. Deterministic given `seed`.
std::vector<std::string> generate_lines(const MarkovSpec& spec, std::size_t n_tokens,
                                        std::uint64_t seed, double end_prob);

/// Exact next-token distribution over a vocabulary for contexts of the
/// generating chain. Chain states missing from the vocabulary contribute
/// their mass to `<unk>`.
class GroundTruth {
 public:
  GroundTruth(std::shared_ptr<const MarkovSpec> spec, const Vocabulary& vocab, double end_prob);

  std::size_t order() const { return spec_->order; }
  std::size_t vocab_size() const { return vocab_size_; }

  /// Context of length order(), `<s>`-padded. Throws "unseen context" for
  /// contexts the generator can never produce.
  std::vector<double> row(std::span<const TokenId> context) const;

  /// Every reachable context (all-`<s>` start context first).
  std::vector<std::vector<TokenId>> contexts() const;

  /// Writes {"space-joined context": [p_0, ..., p_{C-1}], ...}.
  void save_json(const std::filesystem::path& path, const Vocabulary& vocab) const;

 private:
  std::shared_ptr<const MarkovSpec> spec_;
  std::size_t vocab_size_;
  TokenId bos_;
  TokenId eos_;
  TokenId unk_;
  std::vector<TokenId> token_of_state_;
  std::vector<long> state_of_token_;
  double end_prob_;
};

struct SyntheticData {
  Vocabulary vocab;
  Corpus corpus;
  std::vector<std::string> lines;
  std::shared_ptr<const MarkovSpec> spec;
  GroundTruth truth;
};

/// Generates text, builds the vocabulary from it and encodes the corpus.
SyntheticData generate_synthetic(const MarkovSpec& spec, std::size_t n_tokens, std::uint64_t seed,
                                 double end_prob = 0.05);

/// Expected negative log-likelihood per predicted position (nats) of the
/// sentence process produced by generate_lines, computed from the spec.
/// Requires end_prob > 0.
double entropy_rate(const MarkovSpec& spec, double end_prob);

}  // namespace samplecrit
