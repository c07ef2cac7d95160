#pragma once

#include <optional>
#include <string>
#include <vector>

#include "samplecrit/correction.hpp"
#include "samplecrit/model.hpp"
#include "samplecrit/synthetic.hpp"
#include "samplecrit/vocab.hpp"

namespace samplecrit {

/// Which perplexities to compute. `kNone` only needs target scores, so it
/// never touches the full vocabulary.
enum class Normalization { kFull, kNone, kBoth };

std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& s);

struct EvalReport {
  std::size_t positions = 0;
  /// exp of the mean negative log posterior after correction and full
  /// normalization.
  std::optional<double> ppl_normalized;
  /// Pseudo-PPL: exp of the mean negative log u, i.e. the corrected score
  /// used as if it were already normalized.
  std::optional<double> ppl_unnormalized;
  std::optional<double> kl_to_truth;
  /// Moments of log Z over the evaluated positions (full mode only).
  std::optional<LogZStats> log_z;
};

/// Perplexity of `corpus` under the corrected model.
EvalReport perplexity(const ModelParams& params, const Corpus& corpus, const Corrector& corrector,
                      Normalization mode = Normalization::kBoth, std::size_t batch_size = 256);

/// Mean over `contexts` of KL(p_true || p_model) with p_model the corrected,
/// normalized model posterior. Model and truth must share the context order.
double kl_to_truth(const ModelParams& params, const Corrector& corrector, const GroundTruth& truth,
                   const std::vector<std::vector<TokenId>>& contexts);
double kl_to_truth(const ModelParams& params, const Corrector& corrector,
                   const GroundTruth& truth);

}  // namespace samplecrit
