// Command-line front end. Every subcommand reads an optional JSON config and
// applies its flags on top, so `--config base.json --lr 0.5` changes only lr.
//
// Exit codes: 0 ok, 2 usage or data error, 3 failed --assert, 4 divergence,
// 1 anything else.

#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"

namespace {

using nlohmann::json;
using samplecrit::ExperimentConfig;

void set_path(json& root, const std::vector<std::string>& path, json value) {
  json* node = &root;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) node = &(*node)[path[i]];
  (*node)[path.back()] = std::move(value);
}

void overlay(json& base, const json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object())
      overlay(base[key], value);
    else
      base[key] = value;
  }
}

struct Sub {
  CLI::App* app;
  json& patch;

  template <class T>
  Sub& opt(const std::string& name, std::vector<std::string> path, const std::string& help) {
    json* target = &patch;
    app->add_option_function<T>(
        name, [target, path](const T& v) { set_path(*target, path, json(v)); }, help);
    return *this;
  }
  Sub& flag(const std::string& name, std::vector<std::string> path, bool value,
            const std::string& help) {
    json* target = &patch;
    app->add_flag_function(
        name, [target, path, value](std::int64_t) { set_path(*target, path, value); }, help);
    return *this;
  }
};

void add_asserts(CLI::App* app, json& patch) {
  app->add_option_function<std::vector<std::string>>(
      "--assert",
      [&patch](const std::vector<std::string>& items) {
        for (const auto& item : items) {
          std::size_t start = 0;
          while (start <= item.size()) {
            std::size_t end = item.find(',', start);
            if (end == std::string::npos) end = item.size();
            const std::string kv = item.substr(start, end - start);
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw CLI::ValidationError("--assert", "expected key=value");
            try {
              patch["asserts"][kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
            } catch (const std::logic_error&) {
              throw CLI::ValidationError("--assert", "bad threshold in " + kv);
            }
            start = end + 1;
          }
        }
      },
      "Thresholds to enforce, e.g. tv=1e-3 (exit 3 when one fails)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sampling-based training criteria for large-vocabulary language models"};
  app.require_subcommand(1);
  json patch = json::object();
  std::string config_path;

  auto sub = [&](const std::string& name, const std::string& help) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("--config", config_path, "JSON config file (flags override it)");
    Sub h{s, patch};
    h.opt<std::string>("--out", {"output_dir"}, "Output directory");
    h.opt<int>("--threads", {"threads"}, "OpenMP threads for the kernels");
    return h;
  };

  auto gen = sub("generate", "Generate a synthetic corpus from a Markov chain");
  gen.app->add_option_function<std::vector<std::uint64_t>>(
         "--random-spec",
         [&patch](const std::vector<std::uint64_t>& v) {
           patch["generate"]["states"] = v[0];
           patch["generate"]["order"] = v[1];
           patch["generate"]["spec_seed"] = v[2];
         },
         "Random chain: number of states, order, seed")
      ->expected(3);
  gen.opt<std::string>("--spec", {"data", "spec"}, "Chain spec JSON instead of a random one")
      .opt<std::size_t>("--tokens", {"generate", "tokens"}, "Training tokens")
      .opt<std::size_t>("--valid-tokens", {"generate", "valid_tokens"}, "Validation tokens")
      .opt<std::uint64_t>("--seed", {"generate", "seed"}, "Text seed")
      .opt<double>("--end-prob", {"generate", "end_prob"}, "Sentence end probability")
      .opt<std::size_t>("--rank", {"generate", "rank"}, "Rank of the random chain")
      .opt<double>("--strength", {"generate", "strength"}, "Context strength of the chain")
      .opt<double>("--zipf", {"generate", "zipf"}, "Zipf exponent of the chain")
      .flag("--no-truth", {"generate", "write_truth"}, false, "Skip truth.json");

  auto tr = sub("train", "Train a model");
  tr.opt<std::string>("--train", {"data", "train"}, "Training corpus")
      .opt<std::string>("--valid", {"data", "valid"}, "Validation corpus")
      .opt<std::string>("--vocab", {"data", "vocab"}, "Vocabulary file")
      .opt<std::string>("--checkpoint", {"data", "checkpoint"}, "Checkpoint path")
      .opt<std::string>("--criterion", {"criterion"}, "mse|bce|ce|bce-mcs|...|ce-nce")
      .opt<std::size_t>("--K", {"K"}, "Number of noise samples")
      .opt<double>("--alpha", {"alpha"}, "CPS factor (default C/K)")
      .flag("--include-target", {"include_target_in_samples"}, true,
            "Add the target to the sampled sums")
      .opt<std::string>("--noise", {"noise", "kind"}, "log_uniform|smoothed_unigram|uniform")
      .opt<double>("--smoothing", {"noise", "smoothing"}, "Unigram add-delta smoothing")
      .opt<double>("--lr", {"lr"}, "Learning rate")
      .opt<double>("--clip-norm", {"clip_norm"}, "Global gradient norm limit")
      .opt<std::size_t>("--epochs", {"epochs"}, "Epochs")
      .opt<std::size_t>("--batch-size", {"batch_size"}, "Batch size")
      .opt<std::uint64_t>("--seed", {"seed"}, "Training seed")
      .flag("--lr-backoff", {"lr_backoff"}, true, "Cut lr by 10x when validation PPL rises")
      .opt<std::size_t>("--max-batches", {"max_batches_per_epoch"}, "Batches per epoch (0 = all)")
      .opt<std::string>("--variant", {"model", "variant"}, "feedforward|tabular")
      .opt<std::size_t>("--order", {"model", "order"}, "Context length")
      .opt<std::size_t>("--d-emb", {"model", "d_emb"}, "Embedding size")
      .opt<std::size_t>("--d-hidden", {"model", "d_hidden"}, "Hidden size")
      .opt<double>("--init-scale", {"model", "init_scale"}, "Uniform init half-width")
      .opt<std::uint64_t>("--model-seed", {"model", "seed"}, "Init seed")
      .opt<double>("--output-bias", {"model", "output_bias"}, "Initial output bias (default -log C)")
      .flag("--resume", {"resume"}, true, "Continue from the checkpoint if present");

  auto ev = sub("eval", "Evaluate a checkpoint");
  ev.opt<std::string>("--checkpoint", {"data", "checkpoint"}, "Checkpoint path")
      .opt<std::string>("--valid,--corpus", {"data", "valid"}, "Corpus to evaluate")
      .opt<std::string>("--train", {"data", "train"}, "Training corpus (unigram statistics)")
      .opt<std::string>("--vocab", {"data", "vocab"}, "Vocabulary file")
      .opt<std::string>("--spec", {"data", "spec"}, "Generating chain, enables KL to truth")
      .opt<double>("--end-prob", {"generate", "end_prob"}, "Sentence end probability of the chain")
      .opt<std::string>("--normalization", {"eval", "normalization"}, "full|none|both")
      .opt<std::string>("--correction-noise", {"eval", "noise_for_correction"},
                        "auto|train_noise|smoothed_unigram")
      .opt<std::size_t>("--batch-size", {"eval", "batch_size"}, "Positions per forward pass");

  auto orc = sub("oracle-check", "Compare closed-form and numeric optima");
  orc.app->alias("oracle");
  orc.opt<std::size_t>("--C", {"oracle", "C"}, "Number of classes")
      .opt<std::size_t>("--trials", {"oracle", "trials"}, "Problems per criterion and K")
      .opt<std::vector<std::size_t>>("--K", {"oracle", "K"}, "Sample counts")
      .opt<std::vector<std::string>>("--criteria", {"oracle", "criteria"}, "Criteria (default all)")
      .opt<std::uint64_t>("--seed", {"oracle", "seed"}, "Problem seed")
      .opt<double>("--tol", {"oracle", "tol"}, "Optimizer tolerance");
  add_asserts(orc.app, patch);

  auto bn = sub("bench", "Time training steps");
  bn.opt<std::vector<std::size_t>>("--C", {"bench", "C"}, "Vocabulary sizes")
      .opt<std::size_t>("--K", {"K"}, "Number of noise samples")
      .opt<std::vector<std::string>>("--criteria", {"bench", "criteria"},
                                     "Criteria (default ce and every sampled one)")
      .opt<std::size_t>("--batch-size", {"batch_size"}, "Batch size")
      .opt<std::size_t>("--order", {"model", "order"}, "Context length")
      .opt<std::size_t>("--d-emb", {"model", "d_emb"}, "Embedding size")
      .opt<std::size_t>("--d-hidden", {"model", "d_hidden"}, "Hidden size")
      .opt<std::string>("--noise", {"noise", "kind"}, "Noise distribution")
      .opt<std::size_t>("--warmup", {"bench", "warmup"}, "Untimed steps")
      .opt<std::size_t>("--iters", {"bench", "iters"}, "Timed steps")
      .opt<std::uint64_t>("--seed", {"seed"}, "Seed");
  add_asserts(bn.app, patch);

  auto gc = sub("grad-check", "Finite-difference gradient check");
  gc.opt<std::vector<std::string>>("--criteria", {"grad_check", "criteria"}, "Criteria (default all)")
      .opt<std::size_t>("--points", {"grad_check", "points"}, "Random points per criterion")
      .opt<double>("--epsilon", {"grad_check", "epsilon"}, "Finite-difference step")
      .opt<std::size_t>("--C", {"grad_check", "C"}, "Number of classes")
      .opt<std::size_t>("--K", {"grad_check", "K"}, "Number of samples")
      .opt<std::size_t>("--batch-size", {"grad_check", "batch_size"}, "Positions per point")
      .opt<double>("--floor", {"grad_check", "floor"}, "Relative-error denominator floor")
      .opt<std::uint64_t>("--seed", {"seed"}, "Seed");
  add_asserts(gc.app, patch);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    json config = config_path.empty() ? json::object() : samplecrit::read_config_file(config_path);
    overlay(config, patch);
    ExperimentConfig cfg = ExperimentConfig::from_json(config);

    CLI::App* chosen = app.get_subcommands().front();
    const std::string name = chosen->get_name();
    if (name == "generate") samplecrit::cli::cmd_generate(cfg);
    else if (name == "train") samplecrit::cli::cmd_train(cfg);
    else if (name == "eval") samplecrit::cli::cmd_eval(cfg);
    else if (name == "oracle-check") samplecrit::cli::cmd_oracle(cfg);
    else if (name == "bench") samplecrit::cli::cmd_bench(cfg);
    else if (name == "grad-check") samplecrit::cli::cmd_grad_check(cfg);
    return 0;
  } catch (const samplecrit::cli::AssertionFailed& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const samplecrit::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const samplecrit::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
