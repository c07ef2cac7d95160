#include "samplecrit/config.hpp"

#include <fstream>

#include "samplecrit/error.hpp"

namespace samplecrit {

using nlohmann::json;

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// Keys whose values are free-form and therefore not checked key by key.
bool is_open_key(const std::string& path) { return path == "asserts"; }

void check_keys(const json& given, const json& known, const std::string& prefix) {
  if (!given.is_object()) throw DataError("config must be a JSON object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!known.contains(key)) throw DataError("unknown config key: " + path);
    if (known[key].is_object() && !is_open_key(path)) {
      if (!value.is_object()) throw DataError("config key " + path + " must be an object");
      check_keys(value, known[key], path);
    }
  }
}

// Recursive overlay; unlike merge_patch, null is an ordinary value here.
void overlay(json& base, const json& patch, const std::string& prefix) {
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object() && base[key].is_object() && !is_open_key(path))
      overlay(base[key], value, path);
    else
      base[key] = value;
  }
}

template <class T>
T get(const json& j, const char* key, const std::string& prefix) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError("config key " + (prefix.empty() ? std::string(key) : prefix + "." + key) +
                    " has the wrong type");
  }
}

std::optional<double> get_opt(const json& j, const char* key, const std::string& prefix) {
  if (j.at(key).is_null()) return std::nullopt;
  return get<double>(j, key, prefix);
}

}  // namespace

json ExperimentConfig::to_json() const {
  const auto& t = train;
  const auto& m = t.model;
  return {
      {"criterion", samplecrit::to_string(t.criterion.kind)},
      {"K", t.criterion.num_samples},
      {"alpha", opt(t.criterion.alpha)},
      {"include_target_in_samples", t.criterion.include_target_in_samples},
      {"mse_rival_scale", t.criterion.mse_rival_scale},
      {"noise", {{"kind", samplecrit::to_string(t.noise)}, {"smoothing", t.unigram_smoothing}}},
      {"lr", t.lr},
      {"clip_norm", t.clip_norm},
      {"epochs", t.epochs},
      {"batch_size", t.batch_size},
      {"seed", t.seed},
      {"lr_backoff", t.lr_backoff},
      {"max_batches_per_epoch", t.max_batches_per_epoch},
      {"model",
       {{"variant", samplecrit::to_string(m.variant)},
        {"order", m.order},
        {"d_emb", m.d_emb},
        {"d_hidden", m.d_hidden},
        {"init_scale", m.init_scale},
        {"seed", m.seed},
        {"output_bias", opt(m.output_bias)}}},
      {"eval",
       {{"normalization", samplecrit::to_string(eval.normalization)},
        {"noise_for_correction", eval.noise_for_correction},
        {"batch_size", eval.batch_size}}},
      {"data",
       {{"train", data.train},
        {"valid", data.valid},
        {"vocab", data.vocab},
        {"spec", data.spec},
        {"checkpoint", data.checkpoint}}},
      {"generate",
       {{"states", generate.states},
        {"order", generate.order},
        {"spec_seed", generate.spec_seed},
        {"tokens", generate.tokens},
        {"valid_tokens", generate.valid_tokens},
        {"seed", generate.seed},
        {"end_prob", generate.end_prob},
        {"rank", generate.rank},
        {"strength", generate.strength},
        {"zipf", generate.zipf},
        {"write_truth", generate.write_truth}}},
      {"oracle",
       {{"C", oracle.num_classes},
        {"trials", oracle.trials},
        {"K", oracle.num_samples},
        {"criteria", oracle.criteria},
        {"seed", oracle.seed},
        {"tol", oracle.tol}}},
      {"bench",
       {{"C", bench.num_classes},
        {"criteria", bench.criteria},
        {"warmup", bench.warmup},
        {"iters", bench.iters}}},
      {"grad_check",
       {{"points", grad_check.points},
        {"epsilon", grad_check.epsilon},
        {"C", grad_check.num_classes},
        {"K", grad_check.num_samples},
        {"batch_size", grad_check.batch_size},
        {"floor", grad_check.floor},
        {"criteria", grad_check.criteria}}},
      {"output_dir", output_dir},
      {"threads", threads},
      {"resume", resume},
      {"asserts", asserts},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& given) {
  json j = ExperimentConfig().to_json();
  check_keys(given, j, "");
  overlay(j, given, "");

  ExperimentConfig c;
  try {
    auto& t = c.train;
    t.criterion.kind = parse_criterion(get<std::string>(j, "criterion", ""));
    t.criterion.num_samples = get<std::size_t>(j, "K", "");
    t.criterion.alpha = get_opt(j, "alpha", "");
    t.criterion.include_target_in_samples = get<bool>(j, "include_target_in_samples", "");
    t.criterion.mse_rival_scale = get<double>(j, "mse_rival_scale", "");
    t.noise = parse_noise_kind(get<std::string>(j["noise"], "kind", "noise"));
    t.unigram_smoothing = get<double>(j["noise"], "smoothing", "noise");
    t.lr = get<double>(j, "lr", "");
    t.clip_norm = get<double>(j, "clip_norm", "");
    t.epochs = get<std::size_t>(j, "epochs", "");
    t.batch_size = get<std::size_t>(j, "batch_size", "");
    t.seed = get<std::uint64_t>(j, "seed", "");
    t.lr_backoff = get<bool>(j, "lr_backoff", "");
    t.max_batches_per_epoch = get<std::size_t>(j, "max_batches_per_epoch", "");

    const json& m = j["model"];
    t.model.variant = parse_model_variant(get<std::string>(m, "variant", "model"));
    t.model.order = get<std::size_t>(m, "order", "model");
    t.model.d_emb = get<std::size_t>(m, "d_emb", "model");
    t.model.d_hidden = get<std::size_t>(m, "d_hidden", "model");
    t.model.init_scale = get<double>(m, "init_scale", "model");
    t.model.seed = get<std::uint64_t>(m, "seed", "model");
    t.model.output_bias = get_opt(m, "output_bias", "model");

    const json& e = j["eval"];
    c.eval.normalization = parse_normalization(get<std::string>(e, "normalization", "eval"));
    c.eval.noise_for_correction = get<std::string>(e, "noise_for_correction", "eval");
    if (c.eval.noise_for_correction != "auto" && c.eval.noise_for_correction != "train_noise" &&
        c.eval.noise_for_correction != "smoothed_unigram")
      throw DataError("eval.noise_for_correction must be auto, train_noise or smoothed_unigram");
    c.eval.batch_size = get<std::size_t>(e, "batch_size", "eval");

    const json& d = j["data"];
    c.data.train = get<std::string>(d, "train", "data");
    c.data.valid = get<std::string>(d, "valid", "data");
    c.data.vocab = get<std::string>(d, "vocab", "data");
    c.data.spec = get<std::string>(d, "spec", "data");
    c.data.checkpoint = get<std::string>(d, "checkpoint", "data");

    const json& g = j["generate"];
    c.generate.states = get<std::size_t>(g, "states", "generate");
    c.generate.order = get<std::size_t>(g, "order", "generate");
    c.generate.spec_seed = get<std::uint64_t>(g, "spec_seed", "generate");
    c.generate.tokens = get<std::size_t>(g, "tokens", "generate");
    c.generate.valid_tokens = get<std::size_t>(g, "valid_tokens", "generate");
    c.generate.seed = get<std::uint64_t>(g, "seed", "generate");
    c.generate.end_prob = get<double>(g, "end_prob", "generate");
    c.generate.rank = get<std::size_t>(g, "rank", "generate");
    c.generate.strength = get<double>(g, "strength", "generate");
    c.generate.zipf = get<double>(g, "zipf", "generate");
    c.generate.write_truth = get<bool>(g, "write_truth", "generate");

    const json& o = j["oracle"];
    c.oracle.num_classes = get<std::size_t>(o, "C", "oracle");
    c.oracle.trials = get<std::size_t>(o, "trials", "oracle");
    c.oracle.num_samples = get<std::vector<std::size_t>>(o, "K", "oracle");
    c.oracle.criteria = get<std::vector<std::string>>(o, "criteria", "oracle");
    c.oracle.seed = get<std::uint64_t>(o, "seed", "oracle");
    c.oracle.tol = get<double>(o, "tol", "oracle");

    const json& b = j["bench"];
    c.bench.num_classes = get<std::vector<std::size_t>>(b, "C", "bench");
    c.bench.criteria = get<std::vector<std::string>>(b, "criteria", "bench");
    c.bench.warmup = get<std::size_t>(b, "warmup", "bench");
    c.bench.iters = get<std::size_t>(b, "iters", "bench");

    const json& gc = j["grad_check"];
    c.grad_check.points = get<std::size_t>(gc, "points", "grad_check");
    c.grad_check.epsilon = get<double>(gc, "epsilon", "grad_check");
    c.grad_check.num_classes = get<std::size_t>(gc, "C", "grad_check");
    c.grad_check.num_samples = get<std::size_t>(gc, "K", "grad_check");
    c.grad_check.batch_size = get<std::size_t>(gc, "batch_size", "grad_check");
    c.grad_check.floor = get<double>(gc, "floor", "grad_check");
    c.grad_check.criteria = get<std::vector<std::string>>(gc, "criteria", "grad_check");

    c.output_dir = get<std::string>(j, "output_dir", "");
    c.threads = get<int>(j, "threads", "");
    c.resume = get<bool>(j, "resume", "");
    c.asserts = get<std::map<std::string, double>>(j, "asserts", "");
  } catch (const DataError&) {
    throw;
  } catch (const Error& e) {
    throw DataError(e.what());
  }
  if (c.threads < 1) throw DataError("threads must be at least 1");
  return c;
}

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("config not found: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("cannot parse config " + path + ": " + e.what());
  }
}

}  // namespace samplecrit
