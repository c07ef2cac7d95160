#include "samplecrit/noise.hpp"

#include <cmath>

#include "samplecrit/error.hpp"

namespace samplecrit {

std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::kLogUniform: return "log_uniform";
    case NoiseKind::kSmoothedUnigram: return "smoothed_unigram";
    case NoiseKind::kUniform: return "uniform";
  }
  return "?";
}

NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "log_uniform" || s == "log-uniform") return NoiseKind::kLogUniform;
  if (s == "smoothed_unigram" || s == "smoothed-unigram" || s == "unigram")
    return NoiseKind::kSmoothedUnigram;
  if (s == "uniform") return NoiseKind::kUniform;
  throw Error("unknown noise kind: " + s);
}

NoiseDistribution::NoiseDistribution(NoiseKind kind, std::vector<double> pmf)
    : kind_(kind), pmf_(std::move(pmf)) {
  if (pmf_.empty()) throw Error("noise distribution needs at least one class");
  double s = 0.0;
  for (double p : pmf_) {
    if (!(p > 0.0) || !std::isfinite(p)) throw Error("noise pmf must be strictly positive");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-12) throw Error("noise pmf does not sum to one");
  log_pmf_.resize(pmf_.size());
  for (std::size_t i = 0; i < pmf_.size(); ++i) log_pmf_[i] = std::log(pmf_[i]);
}

NoiseDistribution log_uniform(std::size_t num_classes) {
  if (num_classes == 0) throw Error("log_uniform needs C >= 1");
  std::vector<double> p(num_classes);
  const double denom = std::log1p(static_cast<double>(num_classes));
  for (std::size_t c = 0; c < num_classes; ++c) {
    // ln((c+2)/(c+1)) without cancellation.
    p[c] = std::log1p(1.0 / static_cast<double>(c + 1)) / denom;
  }
  return NoiseDistribution(NoiseKind::kLogUniform, std::move(p));
}

NoiseDistribution uniform_noise(std::size_t num_classes) {
  if (num_classes == 0) throw Error("uniform noise needs C >= 1");
  return NoiseDistribution(NoiseKind::kUniform,
                           std::vector<double>(num_classes, 1.0 / static_cast<double>(num_classes)));
}

NoiseDistribution smoothed_unigram(std::span<const std::uint64_t> counts, double smoothing) {
  if (!(smoothing > 0.0)) throw Error("smoothing must be positive");
  if (counts.empty()) throw Error("smoothed_unigram needs at least one class");
  long double total = 0.0L;
  for (auto c : counts) total += static_cast<long double>(c);
  const long double denom = total + smoothing * static_cast<long double>(counts.size());
  std::vector<double> p(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i)
    p[i] = static_cast<double>((static_cast<long double>(counts[i]) + smoothing) / denom);
  return NoiseDistribution(NoiseKind::kSmoothedUnigram, std::move(p));
}

NoiseDistribution smoothed_unigram(const Corpus& corpus, std::size_t num_classes,
                                   double smoothing) {
  std::vector<std::uint64_t> counts(num_classes, 0);
  for (const auto& seq : corpus.sequences)
    for (std::size_t i = 1; i < seq.size(); ++i) ++counts.at(static_cast<std::size_t>(seq[i]));
  return smoothed_unigram(counts, smoothing);
}

AliasTable build_alias(std::span<const double> pmf) {
  const std::size_t n = pmf.size();
  if (n == 0) throw Error("alias table needs at least one class");
  AliasTable t;
  t.prob.assign(n, 1.0);
  t.alias.resize(n);
  std::vector<double> scaled(n);
  std::vector<std::int32_t> small, large;
  for (std::size_t i = 0; i < n; ++i) {
    t.alias[i] = static_cast<std::int32_t>(i);
    scaled[i] = pmf[i] * static_cast<double>(n);
    (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::int32_t>(i));
  }
  while (!small.empty() && !large.empty()) {
    const auto s = small.back();
    small.pop_back();
    const auto l = large.back();
    t.prob[s] = scaled[s];
    t.alias[s] = l;
    // Same as scaled[l] - (1 - scaled[s]), ordered to lose less precision.
    scaled[l] = (scaled[l] + scaled[s]) - 1.0;
    if (scaled[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  // Leftovers are 1 up to rounding.
  for (auto i : small) t.prob[i] = 1.0;
  for (auto i : large) t.prob[i] = 1.0;
  return t;
}

std::int32_t AliasTable::draw(Rng& rng) const {
  const auto column = rng.below(prob.size());
  return rng.uniform() < prob[column] ? static_cast<std::int32_t>(column) : alias[column];
}

std::vector<double> AliasTable::reconstruct() const {
  const std::size_t n = prob.size();
  std::vector<double> p(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] += prob[i];
    if (prob[i] < 1.0) p[static_cast<std::size_t>(alias[i])] += 1.0 - prob[i];
  }
  for (auto& v : p) v /= static_cast<double>(n);
  return p;
}

SampleSet draw_shared(const AliasTable& table, std::size_t k, Rng& rng) {
  if (k == 0) throw Error("sample count K must be positive");
  SampleSet s;
  s.ids.resize(k);
  for (auto& id : s.ids) id = table.draw(rng);
  return s;
}

}  // namespace samplecrit
