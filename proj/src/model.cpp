#include "samplecrit/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "samplecrit/error.hpp"
#include "samplecrit/kernels.hpp"
#include "samplecrit/rng.hpp"

namespace samplecrit {

using nlohmann::json;

std::string to_string(ModelVariant v) {
  return v == ModelVariant::kTabular ? "tabular" : "feedforward";
}

ModelVariant parse_model_variant(const std::string& s) {
  if (s == "tabular") return ModelVariant::kTabular;
  if (s == "feedforward") return ModelVariant::kFeedforward;
  throw DataError("unknown model variant: " + s);
}

// ---------------------------------------------------------------------------
// SparseRows

SparseRows::SparseRows(std::size_t num_rows, std::size_t width)
    : width_(width), slot_(num_rows, -1) {}

std::span<double> SparseRows::row(std::int32_t id) {
  auto& s = slot_.at(static_cast<std::size_t>(id));
  if (s < 0) {
    s = static_cast<std::int32_t>(ids_.size());
    ids_.push_back(id);
    data_.resize(data_.size() + width_, 0.0);
  }
  return slot(static_cast<std::size_t>(s));
}

void SparseRows::clear() {
  for (auto id : ids_) slot_[static_cast<std::size_t>(id)] = -1;
  ids_.clear();
  data_.clear();
}

namespace {

double sum_squares(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc;
}

double sparse_squares(const SparseRows& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < r.touched(); ++i) acc += sum_squares(r.slot(i));
  return acc;
}

void scale_sparse(SparseRows& r, double f) {
  for (std::size_t i = 0; i < r.touched(); ++i)
    for (double& x : r.slot(i)) x *= f;
}

}  // namespace

void ParamGrads::clear() {
  embedding.clear();
  hidden_w.fill(0.0);
  std::fill(hidden_b.begin(), hidden_b.end(), 0.0);
  output_w.clear();
  output_b.clear();
  table.clear();
}

double ParamGrads::squared_norm() const {
  return sparse_squares(embedding) + sum_squares(hidden_w.data()) + sum_squares(hidden_b) +
         sparse_squares(output_w) + sparse_squares(output_b) + sparse_squares(table);
}

void ParamGrads::scale(double factor) {
  scale_sparse(embedding, factor);
  for (double& x : hidden_w.data()) x *= factor;
  for (double& x : hidden_b) x *= factor;
  scale_sparse(output_w, factor);
  scale_sparse(output_b, factor);
  scale_sparse(table, factor);
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

void validate(const ModelConfig& c, std::size_t num_classes) {
  if (c.order < 1) throw DataError("model order must be at least 1");
  if (c.d_emb < 1 || c.d_hidden < 1) throw DataError("model dimensions must be at least 1");
  if (!(c.init_scale >= 0.0)) throw DataError("init_scale must be non-negative");
  if (num_classes < 1) throw DataError("model needs at least one class");
}

double initial_bias(const ModelConfig& c, std::size_t num_classes) {
  return c.output_bias.value_or(-std::log(static_cast<double>(num_classes)));
}

void fill_uniform(std::vector<double>& v, double scale, Rng& rng) {
  for (double& x : v) x = scale == 0.0 ? 0.0 : rng.uniform(-scale, scale);
}

std::uint64_t pack_context(std::span<const TokenId> context, std::size_t num_classes) {
  std::uint64_t key = 0;
  for (auto id : context) {
    if (id < 0 || static_cast<std::size_t>(id) >= num_classes)
      throw DataError("context id out of range");
    key = key * num_classes + static_cast<std::uint64_t>(id);
  }
  return key;
}

void check_packable(std::size_t order, std::size_t num_classes) {
  double bits = static_cast<double>(order) * std::log2(static_cast<double>(num_classes));
  if (bits >= 63.0) throw DataError("tabular context space too large");
}

}  // namespace

std::size_t ModelParams::parameter_count() const {
  if (config.variant == ModelVariant::kTabular) return table.size();
  return embedding.size() + hidden_w.size() + hidden_b.size() + output_w.size() +
         output_b.size();
}

ParamGrads ModelParams::make_grads() const {
  ParamGrads g;
  if (config.variant == ModelVariant::kTabular) {
    g.table = SparseRows(table.rows(), table.cols());
    return g;
  }
  g.embedding = SparseRows(embedding.rows(), embedding.cols());
  g.hidden_w = Matrix(hidden_w.rows(), hidden_w.cols());
  g.hidden_b.assign(hidden_b.size(), 0.0);
  g.output_w = SparseRows(output_w.rows(), output_w.cols());
  g.output_b = SparseRows(output_b.size(), 1);
  return g;
}

std::size_t ModelParams::table_row(std::span<const TokenId> context) const {
  if (context.size() != config.order) throw DataError("context has wrong length");
  auto it = context_rows.find(pack_context(context, num_classes));
  if (it == context_rows.end()) throw DataError("unseen context");
  return it->second;
}

ModelParams init_params(const ModelConfig& config, std::size_t num_classes) {
  validate(config, num_classes);
  if (config.variant == ModelVariant::kTabular)
    throw DataError("tabular models are built with init_tabular");
  ModelParams p;
  p.config = config;
  p.num_classes = num_classes;
  Rng rng(config.seed);
  p.embedding = Matrix(num_classes, config.d_emb);
  p.hidden_w = Matrix(config.d_hidden, config.order * config.d_emb);
  p.hidden_b.assign(config.d_hidden, 0.0);
  p.output_w = Matrix(num_classes, config.d_hidden);
  p.output_b.assign(num_classes, initial_bias(config, num_classes));
  fill_uniform(p.embedding.data(), config.init_scale, rng);
  fill_uniform(p.hidden_w.data(), config.init_scale, rng);
  fill_uniform(p.output_w.data(), config.init_scale, rng);
  return p;
}

ModelParams init_tabular(const ModelConfig& config, std::size_t num_classes,
                         const std::vector<std::vector<TokenId>>& contexts) {
  validate(config, num_classes);
  check_packable(config.order, num_classes);
  ModelParams p;
  p.config = config;
  p.config.variant = ModelVariant::kTabular;
  p.num_classes = num_classes;
  for (const auto& ctx : contexts) {
    if (ctx.size() != config.order) throw DataError("context has wrong length");
    auto [it, inserted] =
        p.context_rows.emplace(pack_context(ctx, num_classes), p.table_contexts.size());
    if (inserted) p.table_contexts.push_back(ctx);
  }
  p.table = Matrix(p.table_contexts.size(), num_classes);
  Rng rng(config.seed);
  fill_uniform(p.table.data(), config.init_scale, rng);
  const double bias = initial_bias(config, num_classes);
  for (double& x : p.table.data()) x += bias;
  return p;
}

// ---------------------------------------------------------------------------
// Forward

ForwardCache encode_contexts(const ModelParams& params, std::span<const TokenId> contexts) {
  const std::size_t m = params.config.order;
  if (contexts.size() % m != 0) throw DataError("context buffer is not a multiple of the order");
  ForwardCache cache;
  cache.batch = contexts.size() / m;
  cache.contexts.assign(contexts.begin(), contexts.end());
  if (params.config.variant == ModelVariant::kTabular) {
    cache.rows.resize(cache.batch);
    for (std::size_t b = 0; b < cache.batch; ++b)
      cache.rows[b] = params.table_row(contexts.subspan(b * m, m));
    return cache;
  }
  const std::size_t de = params.config.d_emb;
  cache.input = Matrix(cache.batch, m * de);
  for (std::size_t b = 0; b < cache.batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      auto id = contexts[b * m + i];
      if (id < 0 || static_cast<std::size_t>(id) >= params.num_classes)
        throw DataError("context id out of range");
      auto e = params.embedding.row(static_cast<std::size_t>(id));
      std::copy(e.begin(), e.end(), cache.input.row(b).begin() + static_cast<std::ptrdiff_t>(i * de));
    }
  }
  // hidden = tanh(input * hidden_w^T + hidden_b); hidden_w rows act as the
  // "classes" of the scoring kernel.
  kernels::score_all(cache.input, params.hidden_w, params.hidden_b, cache.hidden);
  for (double& x : cache.hidden.data()) x = std::tanh(x);
  return cache;
}

namespace {

void check_ids(std::span<const TokenId> ids, std::size_t num_classes) {
  for (auto id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= num_classes)
      throw DataError("class id out of range: " + std::to_string(id));
}

}  // namespace

Matrix forward_subset(const ModelParams& params, const ForwardCache& cache,
                      std::span<const TokenId> class_ids) {
  check_ids(class_ids, params.num_classes);
  Matrix out(cache.batch, class_ids.size());
  if (params.config.variant == ModelVariant::kTabular) {
    for (std::size_t b = 0; b < cache.batch; ++b) {
      auto row = params.table.row(cache.rows[b]);
      for (std::size_t j = 0; j < class_ids.size(); ++j)
        out(b, j) = row[static_cast<std::size_t>(class_ids[j])];
    }
    return out;
  }
  kernels::score_rows(cache.hidden, params.output_w, params.output_b, class_ids, out);
  return out;
}

Matrix forward_subset(const ModelParams& params, std::span<const TokenId> contexts,
                      std::span<const TokenId> class_ids) {
  return forward_subset(params, encode_contexts(params, contexts), class_ids);
}

std::vector<double> forward_targets(const ModelParams& params, const ForwardCache& cache,
                                    std::span<const TokenId> targets) {
  if (targets.size() != cache.batch) throw DataError("one target per position expected");
  check_ids(targets, params.num_classes);
  std::vector<double> out(cache.batch);
  if (params.config.variant == ModelVariant::kTabular) {
    for (std::size_t b = 0; b < cache.batch; ++b)
      out[b] = params.table(cache.rows[b], static_cast<std::size_t>(targets[b]));
    return out;
  }
  kernels::score_pairs(cache.hidden, params.output_w, params.output_b, targets, out);
  return out;
}

Matrix forward_all(const ModelParams& params, const ForwardCache& cache) {
  Matrix out;
  if (params.config.variant == ModelVariant::kTabular) {
    out = Matrix(cache.batch, params.num_classes);
    for (std::size_t b = 0; b < cache.batch; ++b) {
      auto row = params.table.row(cache.rows[b]);
      std::copy(row.begin(), row.end(), out.row(b).begin());
    }
    return out;
  }
  kernels::score_all(cache.hidden, params.output_w, params.output_b, out);
  return out;
}

Matrix forward_all(const ModelParams& params, std::span<const TokenId> contexts) {
  return forward_all(params, encode_contexts(params, contexts));
}

// ---------------------------------------------------------------------------
// Backward

namespace {

void add_to(std::span<double> dst, std::span<const double> src, double scale = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

// Backpropagates d_hidden (post-tanh) through the hidden layer and the
// embedding lookup.
void backward_encoder(const ModelParams& params, const ForwardCache& cache, Matrix& d_hidden,
                      ParamGrads& grads) {
  const std::size_t m = params.config.order;
  const std::size_t de = params.config.d_emb;
  const std::size_t dh = params.config.d_hidden;
  const std::size_t din = m * de;
  for (std::size_t b = 0; b < cache.batch; ++b)
    for (std::size_t k = 0; k < dh; ++k) {
      double h = cache.hidden(b, k);
      d_hidden(b, k) *= 1.0 - h * h;
    }
  for (std::size_t k = 0; k < dh; ++k) {
    auto gw = grads.hidden_w.row(k);
    double gb = 0.0;
    for (std::size_t b = 0; b < cache.batch; ++b) {
      double d = d_hidden(b, k);
      if (d == 0.0) continue;
      gb += d;
      add_to(gw, cache.input.row(b), d);
    }
    grads.hidden_b[k] += gb;
  }
  std::vector<double> d_input(din);
  for (std::size_t b = 0; b < cache.batch; ++b) {
    std::fill(d_input.begin(), d_input.end(), 0.0);
    for (std::size_t k = 0; k < dh; ++k) {
      double d = d_hidden(b, k);
      if (d != 0.0) add_to(d_input, params.hidden_w.row(k), d);
    }
    for (std::size_t i = 0; i < m; ++i) {
      auto g = grads.embedding.row(cache.contexts[b * m + i]);
      add_to(g, std::span<const double>(d_input).subspan(i * de, de));
    }
  }
}

}  // namespace

void backward(const ModelParams& params, const ForwardCache& cache,
              std::span<const TokenId> class_ids, const Matrix& d_subset,
              std::span<const TokenId> targets, std::span<const double> d_targets,
              ParamGrads& grads) {
  const bool has_subset = !class_ids.empty();
  const bool has_targets = !targets.empty();
  if (has_subset && (d_subset.rows() != cache.batch || d_subset.cols() != class_ids.size()))
    throw DataError("upstream shape does not match the subset");
  if (has_targets && (targets.size() != cache.batch || d_targets.size() != cache.batch))
    throw DataError("one target gradient per position expected");
  check_ids(class_ids, params.num_classes);
  check_ids(targets, params.num_classes);

  if (params.config.variant == ModelVariant::kTabular) {
    for (std::size_t b = 0; b < cache.batch; ++b) {
      auto g = grads.table.row(static_cast<std::int32_t>(cache.rows[b]));
      if (has_subset)
        for (std::size_t j = 0; j < class_ids.size(); ++j)
          g[static_cast<std::size_t>(class_ids[j])] += d_subset(b, j);
      if (has_targets) g[static_cast<std::size_t>(targets[b])] += d_targets[b];
    }
    return;
  }

  const std::size_t dh = params.config.d_hidden;
  Matrix d_hidden(cache.batch, dh);
  if (has_subset) {
    kernels::backprop_hidden(d_subset, params.output_w, class_ids, d_hidden);
    Matrix rows(class_ids.size(), dh);
    std::vector<double> bias(class_ids.size());
    kernels::weight_gradients(d_subset, cache.hidden, rows, bias);
    for (std::size_t j = 0; j < class_ids.size(); ++j) {
      add_to(grads.output_w.row(class_ids[j]), rows.row(j));
      grads.output_b.row(class_ids[j])[0] += bias[j];
    }
  }
  if (has_targets) {
    for (std::size_t b = 0; b < cache.batch; ++b) {
      double d = d_targets[b];
      if (d == 0.0) continue;
      add_to(d_hidden.row(b), params.output_w.row(static_cast<std::size_t>(targets[b])), d);
      add_to(grads.output_w.row(targets[b]), cache.hidden.row(b), d);
      grads.output_b.row(targets[b])[0] += d;
    }
  }
  backward_encoder(params, cache, d_hidden, grads);
}

void backward_all(const ModelParams& params, const ForwardCache& cache, const Matrix& d_all,
                  ParamGrads& grads) {
  std::vector<TokenId> ids(params.num_classes);
  for (std::size_t c = 0; c < ids.size(); ++c) ids[c] = static_cast<TokenId>(c);
  backward(params, cache, ids, d_all, {}, {}, grads);
}

void apply_update(ModelParams& params, const ParamGrads& grads, double lr) {
  bool finite = true;
  auto step_sparse = [&](Matrix& m, const SparseRows& g) {
    for (std::size_t i = 0; i < g.touched(); ++i) {
      auto dst = m.row(static_cast<std::size_t>(g.ids()[i]));
      auto src = g.slot(i);
      for (std::size_t k = 0; k < dst.size(); ++k) {
        dst[k] += lr * src[k];
        finite = finite && std::isfinite(dst[k]);
      }
    }
  };
  auto step_dense = [&](std::span<double> dst, std::span<const double> src) {
    for (std::size_t k = 0; k < dst.size(); ++k) {
      dst[k] += lr * src[k];
      finite = finite && std::isfinite(dst[k]);
    }
  };
  if (params.config.variant == ModelVariant::kTabular) {
    step_sparse(params.table, grads.table);
  } else {
    step_sparse(params.embedding, grads.embedding);
    step_dense(params.hidden_w.data(), grads.hidden_w.data());
    step_dense(params.hidden_b, grads.hidden_b);
    step_sparse(params.output_w, grads.output_w);
    for (std::size_t i = 0; i < grads.output_b.touched(); ++i) {
      double& b = params.output_b[static_cast<std::size_t>(grads.output_b.ids()[i])];
      b += lr * grads.output_b.slot(i)[0];
      finite = finite && std::isfinite(b);
    }
  }
  if (!finite) throw Error("divergence");
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'S', 'C', 'K', 'P', 'T', '\0', '\0', '\0'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

void write_array(std::ostream& out, std::span<const double> v) {
  for (double x : v) write_u64(out, std::bit_cast<std::uint64_t>(x));
}

void read_array(std::istream& in, std::span<double> v) {
  for (double& x : v) x = std::bit_cast<double>(read_u64(in));
}

json config_to_json(const ModelConfig& c) {
  json j = {{"variant", to_string(c.variant)}, {"order", c.order},
            {"d_emb", c.d_emb},                {"d_hidden", c.d_hidden},
            {"init_scale", c.init_scale},      {"seed", c.seed}};
  j["output_bias"] = c.output_bias ? json(*c.output_bias) : json(nullptr);
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.variant = parse_model_variant(j.at("variant").get<std::string>());
  c.order = j.at("order").get<std::size_t>();
  c.d_emb = j.at("d_emb").get<std::size_t>();
  c.d_hidden = j.at("d_hidden").get<std::size_t>();
  c.init_scale = j.at("init_scale").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  if (!j.at("output_bias").is_null()) c.output_bias = j.at("output_bias").get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path,
                     const std::string& extra_json) {
  json header = {{"config", config_to_json(params.config)},
                 {"num_classes", params.num_classes},
                 {"extra", json::parse(extra_json)}};
  if (params.config.variant == ModelVariant::kTabular) header["contexts"] = params.table_contexts;
  const std::string text = header.dump();

  // Write to a sibling file and rename so an interrupted run never leaves a
  // half-written checkpoint behind.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
    out.write(kMagic, sizeof kMagic);
    write_u32(out, kVersion);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (params.config.variant == ModelVariant::kTabular) {
      write_array(out, params.table.data());
    } else {
      write_array(out, params.embedding.data());
      write_array(out, params.hidden_w.data());
      write_array(out, params.hidden_b);
      write_array(out, params.output_w.data());
      write_array(out, params.output_b);
    }
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelParams load_checkpoint(const std::filesystem::path& path, std::string* extra_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint not found: " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw DataError("not a checkpoint: " + path.string());
  auto version = read_u32(in);
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  auto len = read_u64(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw DataError("truncated checkpoint");
  json header = json::parse(text);

  ModelConfig config = config_from_json(header.at("config"));
  auto num_classes = header.at("num_classes").get<std::size_t>();
  ModelParams p;
  if (config.variant == ModelVariant::kTabular) {
    ModelConfig zero = config;
    zero.init_scale = 0.0;
    p = init_tabular(zero, num_classes,
                     header.at("contexts").get<std::vector<std::vector<TokenId>>>());
    p.config = config;
    read_array(in, p.table.data());
  } else {
    ModelConfig zero = config;
    zero.init_scale = 0.0;
    p = init_params(zero, num_classes);
    p.config = config;
    read_array(in, p.embedding.data());
    read_array(in, p.hidden_w.data());
    read_array(in, p.hidden_b);
    read_array(in, p.output_w.data());
    read_array(in, p.output_b);
  }
  if (extra_json) *extra_json = header.at("extra").dump();
  return p;
}

}  // namespace samplecrit
