#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "samplecrit/rng.hpp"
#include "samplecrit/vocab.hpp"

namespace samplecrit {

enum class NoiseKind { kLogUniform, kSmoothedUnigram, kUniform };

std::string to_string(NoiseKind k);
NoiseKind parse_noise_kind(const std::string& s);

/// Strictly positive pmf over class ids with cached logs.
class NoiseDistribution {
 public:
  NoiseDistribution(NoiseKind kind, std::vector<double> pmf);

  NoiseKind kind() const { return kind_; }
  std::size_t size() const { return pmf_.size(); }
  double pmf(std::size_t c) const { return pmf_[c]; }
  double log_pmf(std::size_t c) const { return log_pmf_[c]; }
  const std::vector<double>& pmf() const { return pmf_; }
  const std::vector<double>& log_pmf() const { return log_pmf_; }

 private:
  NoiseKind kind_;
  std::vector<double> pmf_;
  std::vector<double> log_pmf_;
};

/// pmf[c] = ln((c+2)/(c+1)) / ln(C+1); telescopes to one.
NoiseDistribution log_uniform(std::size_t num_classes);

NoiseDistribution uniform_noise(std::size_t num_classes);

/// (count(c) + smoothing) / (N + smoothing * C) over target counts of the
/// corpus (every position after `<s>`).
NoiseDistribution smoothed_unigram(const Corpus& corpus, std::size_t num_classes,
                                   double smoothing = 1.0);
NoiseDistribution smoothed_unigram(std::span<const std::uint64_t> counts, double smoothing = 1.0);

/// Walker/Vose alias table.
struct AliasTable {
  std::vector<double> prob;
  std::vector<std::int32_t> alias;

  std::size_t size() const { return prob.size(); }
  std::int32_t draw(Rng& rng) const;
  /// pmf implied by the table.
  std::vector<double> reconstruct() const;
};

AliasTable build_alias(std::span<const double> pmf);
inline AliasTable build_alias(const NoiseDistribution& d) { return build_alias(d.pmf()); }

/// K i.i.d. draws shared by every position of a batch.
struct SampleSet {
  std::vector<TokenId> ids;
  std::size_t size() const { return ids.size(); }
};

SampleSet draw_shared(const AliasTable& table, std::size_t k, Rng& rng);

}  // namespace samplecrit
