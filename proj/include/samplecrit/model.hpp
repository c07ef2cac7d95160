#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "samplecrit/matrix.hpp"
#include "samplecrit/vocab.hpp"

namespace samplecrit {

enum class ModelVariant { kTabular, kFeedforward };

std::string to_string(ModelVariant v);
ModelVariant parse_model_variant(const std::string& s);

struct ModelConfig {
  ModelVariant variant = ModelVariant::kFeedforward;
  std::size_t order = 2;  // context length m
  std::size_t d_emb = 64;
  std::size_t d_hidden = 256;
  double init_scale = 0.05;
  std::uint64_t seed = 1;
  /// Initial output bias; unset means -log C.
  std::optional<double> output_bias;
};

/// Row-sparse gradient for a matrix with `num_rows` rows. Rows are created
/// on first touch; clear() costs O(touched rows).
class SparseRows {
 public:
  SparseRows() = default;
  SparseRows(std::size_t num_rows, std::size_t width);

  std::size_t width() const { return width_; }
  std::size_t num_rows() const { return slot_.size(); }
  std::size_t touched() const { return ids_.size(); }
  const std::vector<std::int32_t>& ids() const { return ids_; }

  /// Accumulator for `id`, zero-initialized on first touch.
  std::span<double> row(std::int32_t id);
  std::span<const double> slot(std::size_t i) const {
    return {data_.data() + i * width_, width_};
  }
  std::span<double> slot(std::size_t i) { return {data_.data() + i * width_, width_}; }

  void clear();

 private:
  std::size_t width_ = 0;
  std::vector<std::int32_t> slot_;
  std::vector<std::int32_t> ids_;
  std::vector<double> data_;
};

struct ParamGrads {
  // Feedforward.
  SparseRows embedding;
  Matrix hidden_w;
  std::vector<double> hidden_b;
  SparseRows output_w;
  SparseRows output_b;
  // Tabular.
  SparseRows table;

  void clear();
  double squared_norm() const;
  void scale(double factor);
};

/// Parameters of either model variant. The feedforward model is
/// embedding -> concat -> tanh hidden layer -> linear output over C classes.
/// The tabular model stores one free score row per known context.
struct ModelParams {
  ModelConfig config;
  std::size_t num_classes = 0;

  Matrix embedding;   // C x d_emb
  Matrix hidden_w;    // d_hidden x (m * d_emb)
  std::vector<double> hidden_b;
  Matrix output_w;    // C x d_hidden
  std::vector<double> output_b;

  Matrix table;  // contexts x C
  std::unordered_map<std::uint64_t, std::size_t> context_rows;
  std::vector<std::vector<TokenId>> table_contexts;

  std::size_t parameter_count() const;
  ParamGrads make_grads() const;

  /// Row of the tabular model for `context`; throws "unseen context".
  std::size_t table_row(std::span<const TokenId> context) const;
};

/// Uniform init in [-init_scale, init_scale], deterministic in the seed.
/// Hidden biases start at zero, output biases at config.output_bias.
ModelParams init_params(const ModelConfig& config, std::size_t num_classes);

/// Tabular model over the given contexts (each of length config.order).
ModelParams init_tabular(const ModelConfig& config, std::size_t num_classes,
                         const std::vector<std::vector<TokenId>>& contexts);

/// Intermediate values of a forward pass, reused by backward.
struct ForwardCache {
  std::size_t batch = 0;
  std::vector<TokenId> contexts;  // batch x m
  Matrix input;                   // batch x (m * d_emb)
  Matrix hidden;                  // batch x d_hidden, post-tanh
  std::vector<std::size_t> rows;  // tabular rows
};

/// Runs the context encoder. `contexts` is row-major batch x m.
ForwardCache encode_contexts(const ModelParams& params, std::span<const TokenId> contexts);

/// Raw scores for the listed classes for every position: batch x |ids|.
/// Cost is proportional to |ids|.
Matrix forward_subset(const ModelParams& params, const ForwardCache& cache,
                      std::span<const TokenId> class_ids);
Matrix forward_subset(const ModelParams& params, std::span<const TokenId> contexts,
                      std::span<const TokenId> class_ids);

/// One score per position for class `targets[b]`.
std::vector<double> forward_targets(const ModelParams& params, const ForwardCache& cache,
                                    std::span<const TokenId> targets);

/// Raw scores for the full vocabulary: batch x C.
Matrix forward_all(const ModelParams& params, const ForwardCache& cache);
Matrix forward_all(const ModelParams& params, std::span<const TokenId> contexts);

/// Accumulates into `grads` the gradient of
///   sum_b sum_j d_subset(b, j) * score(b, class_ids[j])
/// + sum_b d_targets[b] * score(b, targets[b]).
/// Either part may be empty. Duplicate ids accumulate additively.
void backward(const ModelParams& params, const ForwardCache& cache,
              std::span<const TokenId> class_ids, const Matrix& d_subset,
              std::span<const TokenId> targets, std::span<const double> d_targets,
              ParamGrads& grads);

/// Gradient for upstream over all C classes.
void backward_all(const ModelParams& params, const ForwardCache& cache, const Matrix& d_all,
                  ParamGrads& grads);

/// params += lr * grads. Throws "divergence" on a non-finite result.
void apply_update(ModelParams& params, const ParamGrads& grads, double lr);

/// Binary checkpoint: magic, version, JSON header, then the parameter arrays
/// as little-endian float64. `extra` is stored in the header verbatim.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path,
                     const std::string& extra_json = "{}");
ModelParams load_checkpoint(const std::filesystem::path& path, std::string* extra_json = nullptr);

}  // namespace samplecrit
