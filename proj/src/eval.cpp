#include "samplecrit/eval.hpp"

#include <algorithm>
#include <cmath>

#include "samplecrit/batching.hpp"
#include "samplecrit/error.hpp"

namespace samplecrit {

std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::kFull: return "full";
    case Normalization::kNone: return "none";
    case Normalization::kBoth: return "both";
  }
  return "?";
}

Normalization parse_normalization(const std::string& s) {
  if (s == "full") return Normalization::kFull;
  if (s == "none") return Normalization::kNone;
  if (s == "both") return Normalization::kBoth;
  throw DataError("unknown normalization mode: " + s);
}

EvalReport perplexity(const ModelParams& params, const Corpus& corpus, const Corrector& corrector,
                      Normalization mode, std::size_t batch_size) {
  if (corrector.num_classes() != params.num_classes)
    throw DataError("corrector and model disagree on the number of classes");
  if (batch_size == 0) throw DataError("batch size must be positive");
  // Every encoded sequence starts with `<s>`.
  const TokenId bos = corpus.sequences.empty() || corpus.sequences[0].empty()
                          ? 0
                          : corpus.sequences[0][0];
  const PositionTable table = flatten(corpus, params.config.order, bos);
  const std::size_t n = table.size();
  if (n == 0) throw DataError("cannot evaluate an empty corpus");
  const std::size_t m = params.config.order;
  const bool full = mode != Normalization::kNone;
  const bool pseudo = mode != Normalization::kFull;

  double sum_logp = 0.0;
  double sum_logu = 0.0;
  double sum_z = 0.0;
  double sum_z2 = 0.0;
  std::vector<double> log_u(params.num_classes);
  for (std::size_t lo = 0; lo < n; lo += batch_size) {
    const std::size_t hi = std::min(n, lo + batch_size);
    std::span<const TokenId> ctx(table.contexts.data() + lo * m, (hi - lo) * m);
    std::span<const TokenId> tgt(table.targets.data() + lo, hi - lo);
    const ForwardCache cache = encode_contexts(params, ctx);
    if (full) {
      const Matrix scores = forward_all(params, cache);
      for (std::size_t b = 0; b < hi - lo; ++b) {
        corrector.log_u_row(scores.row(b), log_u);
        const double log_z = log_sum_exp(log_u);
        const double lu = log_u[static_cast<std::size_t>(tgt[b])];
        const double lp = lu - log_z;
        if (!std::isfinite(lp)) throw Error("zero-probability event during evaluation");
        sum_logp += lp;
        sum_logu += lu;
        sum_z += log_z;
        sum_z2 += log_z * log_z;
      }
    } else {
      const auto s = forward_targets(params, cache, tgt);
      for (std::size_t b = 0; b < hi - lo; ++b)
        sum_logu += corrector.log_u(static_cast<std::size_t>(tgt[b]), s[b]);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  EvalReport r;
  r.positions = n;
  if (full) {
    r.ppl_normalized = std::exp(-sum_logp * inv_n);
    const double mean = sum_z * inv_n;
    r.log_z = LogZStats{mean, std::max(0.0, sum_z2 * inv_n - mean * mean)};
  }
  if (pseudo) r.ppl_unnormalized = std::exp(-sum_logu * inv_n);
  return r;
}

double kl_to_truth(const ModelParams& params, const Corrector& corrector, const GroundTruth& truth,
                   const std::vector<std::vector<TokenId>>& contexts) {
  if (truth.order() != params.config.order)
    throw DataError("model and ground truth use different context orders");
  if (truth.vocab_size() != params.num_classes)
    throw DataError("model and ground truth use different vocabularies");
  if (contexts.empty()) throw DataError("no contexts to compare");
  const std::size_t m = params.config.order;
  constexpr std::size_t kChunk = 256;
  double total = 0.0;
  std::vector<TokenId> flat;
  for (std::size_t lo = 0; lo < contexts.size(); lo += kChunk) {
    const std::size_t hi = std::min(contexts.size(), lo + kChunk);
    flat.clear();
    for (std::size_t i = lo; i < hi; ++i) {
      if (contexts[i].size() != m) throw DataError("context has wrong length");
      flat.insert(flat.end(), contexts[i].begin(), contexts[i].end());
    }
    const Matrix scores = forward_all(params, flat);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto p_true = truth.row(contexts[i]);
      const auto est = normalized_posterior(corrector, scores.row(i - lo));
      double kl = 0.0;
      for (std::size_t c = 0; c < p_true.size(); ++c)
        if (p_true[c] > 0.0) kl += p_true[c] * (std::log(p_true[c]) - (est.log_u[c] - est.log_z));
      total += std::max(0.0, kl);
    }
  }
  return total / static_cast<double>(contexts.size());
}

double kl_to_truth(const ModelParams& params, const Corrector& corrector,
                   const GroundTruth& truth) {
  return kl_to_truth(params, corrector, truth, truth.contexts());
}

}  // namespace samplecrit
