#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

#include "samplecrit/bench.hpp"
#include "samplecrit/correction.hpp"
#include "samplecrit/gradcheck.hpp"
#include "samplecrit/kernels.hpp"
#include "samplecrit/oracle.hpp"
#include "samplecrit/synthetic.hpp"

namespace samplecrit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path out_dir(const ExperimentConfig& cfg) {
  fs::path dir = cfg.output_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory: " + dir.string());
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

json envelope(const std::string& command, const ExperimentConfig& cfg) {
  return {{"command", command}, {"config", cfg.to_json()}};
}

// Criterion names from the command line; a bad name is a usage error.
CriterionKind criterion_arg(const std::string& name) {
  try {
    return parse_criterion(name);
  } catch (const Error& e) {
    throw DataError(e.what());
  }
}

std::vector<CriterionKind> kinds_or_all(const std::vector<std::string>& names) {
  std::vector<CriterionKind> out;
  if (names.empty()) return {kAllCriteria.begin(), kAllCriteria.end()};
  for (const auto& n : names) out.push_back(criterion_arg(n));
  return out;
}

// Asserted thresholds: `value` must not exceed the limit (or, with
// `at_least`, must reach it).
void check_assert(const ExperimentConfig& cfg, const std::string& key, double value,
                  std::vector<std::string>& failures, bool at_least = false) {
  auto it = cfg.asserts.find(key);
  if (it == cfg.asserts.end()) return;
  const bool ok = at_least ? value >= it->second : value < it->second;
  if (!ok) {
    std::ostringstream msg;
    msg << key << " = " << value << (at_least ? " below " : " not below ") << it->second;
    failures.push_back(msg.str());
  }
}

void finish_asserts(const ExperimentConfig& cfg, const std::vector<std::string>& failures,
                    const std::vector<std::string>& known) {
  for (const auto& [key, limit] : cfg.asserts) {
    (void)limit;
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw DataError("unknown assertion: " + key);
  }
  if (failures.empty()) return;
  std::string msg = "assertion failed: ";
  for (std::size_t i = 0; i < failures.size(); ++i) msg += (i ? "; " : "") + failures[i];
  throw AssertionFailed(msg);
}

Corpus load_corpus(const std::string& path, const Vocabulary& vocab, const char* what) {
  if (path.empty()) throw DataError(std::string("no ") + what + " corpus given");
  return encode(vocab, read_lines(path));
}

Vocabulary load_vocab(const ExperimentConfig& cfg) {
  if (cfg.data.vocab.empty()) throw DataError("no vocabulary given");
  return Vocabulary::load(cfg.data.vocab);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------

void cmd_generate(const ExperimentConfig& cfg) {
  const auto& g = cfg.generate;
  if (g.tokens == 0) throw DataError("tokens must be positive");
  if (!(g.end_prob > 0.0 && g.end_prob < 1.0)) throw DataError("end_prob must be in (0, 1)");
  MarkovSpec spec = cfg.data.spec.empty()
                        ? random_markov_spec(g.states, g.order, g.spec_seed,
                                             RandomSpecOptions{g.rank, g.strength, g.zipf})
                        : MarkovSpec::load(cfg.data.spec);
  const std::size_t valid_tokens = g.valid_tokens ? g.valid_tokens : std::max<std::size_t>(1, g.tokens / 10);

  const fs::path dir = out_dir(cfg);
  const SyntheticData data = generate_synthetic(spec, g.tokens, g.seed, g.end_prob);
  const auto valid_lines = generate_lines(spec, valid_tokens, g.seed ^ 0x7F4A7C15ull, g.end_prob);
  const Corpus valid = encode(data.vocab, valid_lines);

  write_lines(dir / "train.txt", data.lines);
  write_lines(dir / "valid.txt", valid_lines);
  data.vocab.save(dir / "vocab.tsv");
  spec.save(dir / "spec.json");
  if (g.write_truth) data.truth.save_json(dir / "truth.json", data.vocab);

  const double h = entropy_rate(spec, g.end_prob);
  json summary = envelope("generate", cfg);
  summary["results"] = {{"vocab_size", data.vocab.size()},
                        {"states", spec.num_states},
                        {"order", spec.order},
                        {"train_sentences", data.corpus.sequences.size()},
                        {"train_positions", data.corpus.num_positions()},
                        {"valid_sentences", valid.sequences.size()},
                        {"valid_positions", valid.num_positions()},
                        {"entropy_rate", h},
                        {"entropy_rate_ppl", std::exp(h)}};
  write_file(dir / "generate_report.json", summary.dump(2) + "\n");
  std::cout << "vocab " << data.vocab.size() << " (" << spec.num_states << " states + reserved), "
            << data.corpus.num_positions() << " train positions, " << valid.num_positions()
            << " valid positions, entropy-rate PPL " << fmt(std::exp(h)) << "\n"
            << "wrote " << dir.string() << "\n";
}

// ---------------------------------------------------------------------------

void cmd_train(ExperimentConfig cfg) {
  kernels::set_threads(cfg.threads);
  const Vocabulary vocab = [&] {
    // Check the corpora first so a missing corpus is reported as such.
    if (cfg.data.train.empty() || !fs::exists(cfg.data.train))
      throw DataError("corpus not found: " + cfg.data.train);
    if (cfg.data.valid.empty() || !fs::exists(cfg.data.valid))
      throw DataError("corpus not found: " + cfg.data.valid);
    return load_vocab(cfg);
  }();
  const Corpus train_corpus = load_corpus(cfg.data.train, vocab, "training");
  const Corpus valid = load_corpus(cfg.data.valid, vocab, "validation");
  const std::size_t num_classes = vocab.size();
  cfg.train.criterion = cfg.train.criterion.resolved(num_classes);

  const fs::path dir = out_dir(cfg);
  const fs::path ckpt = cfg.data.checkpoint.empty() ? dir / "checkpoint.bin" : fs::path(cfg.data.checkpoint);
  const json config_echo = cfg.to_json();

  std::optional<TrainState> resume;
  if (cfg.resume && fs::exists(ckpt)) {
    std::string extra;
    TrainState st;
    st.params = load_checkpoint(ckpt, &extra);
    const json e = json::parse(extra);
    st.epochs_done = e.at("epochs_done").get<std::size_t>();
    st.lr = e.at("lr").get<double>();
    st.best_ppl = e.at("best_ppl").get<double>();
    st.sample_rng = e.at("sample_rng").get<std::string>();
    for (const auto& r : e.at("log")) {
      EpochRecord rec;
      rec.epoch = r.at("epoch").get<std::size_t>();
      rec.batches = r.at("batches").get<std::size_t>();
      rec.lr = r.at("lr").get<double>();
      rec.mean_value = r.at("mean_value").get<double>();
      rec.valid_ppl = r.at("valid_ppl").get<double>();
      rec.valid_pseudo_ppl = r.at("valid_pseudo_ppl").get<double>();
      rec.log_z_mean = r.at("log_z_mean").get<double>();
      rec.log_z_var = r.at("log_z_var").get<double>();
      rec.max_grad_norm = r.at("max_grad_norm").get<double>();
      rec.note = r.value("note", "");
      st.log.epochs.push_back(rec);
    }
    std::cout << "resuming from " << ckpt.string() << " after epoch " << st.epochs_done << "\n";
    resume = std::move(st);
  }

  TrainHooks hooks;
  hooks.on_message = [](const std::string& m) { std::cout << m << std::endl; };
  hooks.on_epoch = [&](const TrainState& st) {
    json log = json::array();
    for (const auto& r : st.log.epochs) log.push_back(json::parse(TrainLog::to_json_line(r, false)));
    json extra = {{"config", config_echo},   {"epochs_done", st.epochs_done},
                  {"lr", st.lr},             {"best_ppl", st.best_ppl},
                  {"sample_rng", st.sample_rng}, {"log", log}};
    save_checkpoint(st.params, ckpt, extra.dump());
  };

  const TrainState st = train(cfg.train, train_corpus, valid, num_classes, hooks, std::move(resume));

  std::ofstream log_out(dir / "train_log.jsonl", std::ios::trunc);
  st.log.write_jsonl(log_out);
  if (!log_out) throw DataError("cannot write train log");

  json report = envelope("train", cfg);
  json epochs = json::array();
  for (const auto& r : st.log.epochs) epochs.push_back(json::parse(TrainLog::to_json_line(r)));
  report["results"] = {{"num_classes", num_classes},
                       {"parameters", st.params.parameter_count()},
                       {"epochs", epochs},
                       {"checkpoint", ckpt.string()}};
  write_file(dir / "train_report.json", report.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

void cmd_eval(const ExperimentConfig& cfg) {
  kernels::set_threads(cfg.threads);
  const fs::path ckpt = cfg.data.checkpoint.empty() ? fs::path(cfg.output_dir) / "checkpoint.bin"
                                                    : fs::path(cfg.data.checkpoint);
  std::string extra;
  const ModelParams params = load_checkpoint(ckpt, &extra);
  const json trained = json::parse(extra).at("config");
  const TrainConfig tc = ExperimentConfig::from_json(trained).train;

  if (cfg.data.valid.empty() || !fs::exists(cfg.data.valid))
    throw DataError("corpus not found: " + cfg.data.valid);
  const Vocabulary vocab = load_vocab(cfg);
  if (vocab.size() != params.num_classes) throw DataError("vocabulary does not match the checkpoint");
  const Corpus corpus = load_corpus(cfg.data.valid, vocab, "evaluation");

  // The unigram statistics come from the training corpus when available;
  // the vocabulary counts are the same numbers when it was built from it.
  std::optional<Corpus> train_corpus;
  if (!cfg.data.train.empty()) train_corpus = load_corpus(cfg.data.train, vocab, "training");
  auto unigram = [&](double smoothing) {
    return train_corpus ? smoothed_unigram(*train_corpus, vocab.size(), smoothing)
                        : smoothed_unigram(vocab.counts(), smoothing);
  };
  const NoiseDistribution train_noise = [&] {
    if (tc.noise == NoiseKind::kSmoothedUnigram) return unigram(tc.unigram_smoothing);
    return make_noise(tc.noise, corpus, vocab.size());
  }();

  const CriterionKind kind = tc.criterion.kind;
  std::string which = cfg.eval.noise_for_correction;
  if (which == "auto") {
    const bool queries_noise = kind == CriterionKind::kBceMcs || kind == CriterionKind::kBceCps;
    which = queries_noise && cfg.eval.normalization == Normalization::kNone ? "smoothed_unigram"
                                                                            : "train_noise";
  }
  const NoiseDistribution correction_noise =
      which == "smoothed_unigram" ? unigram(cfg.train.unigram_smoothing) : train_noise;
  const CriterionConfig crit = tc.criterion.resolved(vocab.size());
  const Corrector corrector(kind, correction_noise, crit.num_samples, crit.alpha.value_or(1.0));

  EvalReport r = perplexity(params, corpus, corrector, cfg.eval.normalization, cfg.eval.batch_size);
  if (!cfg.data.spec.empty()) {
    auto spec = std::make_shared<const MarkovSpec>(MarkovSpec::load(cfg.data.spec));
    const GroundTruth truth(spec, vocab, cfg.generate.end_prob);
    r.kl_to_truth = kl_to_truth(params, corrector, truth);
  }

  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json report = envelope("eval", cfg);
  report["results"] = {{"criterion", to_string(kind)},
                       {"sampling", sampling_label(kind)},
                       {"correction_noise", which},
                       {"positions", r.positions},
                       {"ppl", opt(r.ppl_normalized)},
                       {"pseudo_ppl", opt(r.ppl_unnormalized)},
                       {"kl", opt(r.kl_to_truth)},
                       {"log_z_mean", r.log_z ? json(r.log_z->mean) : json(nullptr)},
                       {"log_z_var", r.log_z ? json(r.log_z->variance) : json(nullptr)}};
  const fs::path dir = out_dir(cfg);
  write_file(dir / "eval_report.json", report.dump(2) + "\n");

  auto cell = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("-"); };
  std::ostringstream tsv;
  tsv << "criterion\tsampling\tms_per_batch\tppl\tpseudo_ppl\tkl\n"
      << to_string(kind) << '\t' << sampling_label(kind) << "\t-\t" << cell(r.ppl_normalized)
      << '\t' << cell(r.ppl_unnormalized) << '\t' << cell(r.kl_to_truth) << '\n';
  write_file(dir / "eval_report.tsv", tsv.str());
  std::cout << tsv.str();
}

// ---------------------------------------------------------------------------

void cmd_oracle(const ExperimentConfig& cfg) {
  const auto& o = cfg.oracle;
  if (o.trials == 0 || o.num_classes < 2) throw DataError("oracle needs trials >= 1 and C >= 2");
  Rng rng(o.seed);
  json rows = json::array();
  std::ostringstream tsv;
  tsv << "criterion\tK\ttrials\tmax_tv\tmax_residual_closed\tmax_residual_numeric\tinfeasible\t"
         "flag_errors\n";
  double worst_tv = 0.0, worst_res = 0.0;
  std::size_t flag_errors_total = 0;
  for (CriterionKind kind : kinds_or_all(o.criteria)) {
    for (std::size_t k : o.num_samples) {
      double max_tv = 0.0, max_rc = 0.0, max_rn = 0.0;
      std::size_t infeasible = 0, flag_errors = 0;
      for (std::size_t t = 0; t < o.trials; ++t) {
        const bool feasible_draw = kind != CriterionKind::kCeNce || t % 2 == 0;
        const SurrogateProblem pr = random_problem(kind, o.num_classes, k, rng, feasible_draw);
        const OptimumReport rep = compare_optima(pr, o.tol);
        if (kind == CriterionKind::kCeNce) {
          double lo = INFINITY, hi = -INFINITY;
          for (std::size_t c = 0; c < pr.size(); ++c) {
            const double r = pr.p[c] / pr.noise[c];
            lo = std::min(lo, r);
            hi = std::max(hi, r);
          }
          const bool expect_infeasible = hi / lo > std::exp(1.0);
          if (expect_infeasible == rep.feasible) ++flag_errors;
          if (!rep.feasible) ++infeasible;
          max_rn = std::max(max_rn, rep.residual_numeric);
          if (rep.feasible) {
            max_tv = std::max(max_tv, rep.tv_distance);
            max_rc = std::max(max_rc, rep.residual_closed);
          }
          worst_res = std::max(worst_res, rep.residual_numeric);
        } else {
          max_tv = std::max(max_tv, rep.tv_distance);
          max_rc = std::max(max_rc, rep.residual_closed);
          max_rn = std::max(max_rn, rep.residual_numeric);
          worst_res = std::max(worst_res, rep.residual_closed);
        }
      }
      worst_tv = std::max(worst_tv, max_tv);
      flag_errors_total += flag_errors;
      rows.push_back({{"criterion", to_string(kind)},
                      {"K", k},
                      {"trials", o.trials},
                      {"max_tv", max_tv},
                      {"max_residual_closed", max_rc},
                      {"max_residual_numeric", max_rn},
                      {"infeasible", infeasible},
                      {"flag_errors", flag_errors}});
      tsv << to_string(kind) << '\t' << k << '\t' << o.trials << '\t' << fmt(max_tv) << '\t'
          << fmt(max_rc) << '\t' << fmt(max_rn) << '\t' << infeasible << '\t' << flag_errors
          << '\n';
    }
  }
  json report = envelope("oracle-check", cfg);
  report["results"] = rows;
  const fs::path dir = out_dir(cfg);
  write_file(dir / "oracle_report.json", report.dump(2) + "\n");
  write_file(dir / "oracle_report.tsv", tsv.str());
  std::cout << tsv.str();

  if (cfg.asserts.empty()) return;
  std::vector<std::string> failures;
  check_assert(cfg, "tv", worst_tv, failures);
  check_assert(cfg, "residual", worst_res, failures);
  if (flag_errors_total > 0)
    failures.push_back(std::to_string(flag_errors_total) + " CE-NCE feasibility flags wrong");
  finish_asserts(cfg, failures, {"tv", "residual"});
}

// ---------------------------------------------------------------------------

void cmd_bench(const ExperimentConfig& cfg) {
  std::vector<CriterionConfig> crits;
  std::vector<CriterionKind> kinds;
  if (cfg.bench.criteria.empty()) {
    kinds.push_back(CriterionKind::kCe);
    for (auto k : kAllCriteria)
      if (is_sampled(k)) kinds.push_back(k);
  } else {
    for (const auto& n : cfg.bench.criteria) kinds.push_back(criterion_arg(n));
  }
  for (auto k : kinds) {
    CriterionConfig c = cfg.train.criterion;
    c.kind = k;
    crits.push_back(c);
  }

  json runs = json::array();
  std::ostringstream tsv;
  std::vector<std::string> failures;
  double min_speedup = INFINITY;
  for (std::size_t num_classes : cfg.bench.num_classes) {
    BenchSetup setup;
    setup.num_classes = num_classes;
    setup.batch_size = cfg.train.batch_size;
    setup.model = cfg.train.model;
    setup.noise = cfg.train.noise;
    setup.seed = cfg.train.seed;
    setup.warmup = cfg.bench.warmup;
    setup.iters = cfg.bench.iters;
    const BenchReport rep = bench_step(setup, crits);
    runs.push_back(json::parse(bench_json(rep)));
    tsv << "# C=" << num_classes << " K=" << cfg.train.criterion.num_samples << " B="
        << setup.batch_size << "\n";
    write_bench_tsv(tsv, rep);
    std::cout << "C=" << num_classes << "\n";
    for (const auto& e : rep.entries) {
      std::cout << "  " << std::left << std::setw(8) << to_string(e.criterion.kind) << std::right
                << std::setw(10) << std::fixed << std::setprecision(2) << e.seconds_per_batch * 1e3
                << " ms/batch";
      if (e.speedup_percent && e.criterion.kind != CriterionKind::kCe) {
        std::cout << "  speedup " << std::setprecision(1) << *e.speedup_percent << "%";
        min_speedup = std::min(min_speedup, *e.speedup_percent);
      }
      std::cout << std::defaultfloat << "\n";
    }
  }
  json report = envelope("bench", cfg);
  report["results"] = runs;
  const fs::path dir = out_dir(cfg);
  write_file(dir / "bench_report.json", report.dump(2) + "\n");
  write_file(dir / "bench_report.tsv", tsv.str());

  if (cfg.asserts.empty()) return;
  if (std::isfinite(min_speedup)) check_assert(cfg, "speedup", min_speedup, failures, true);
  finish_asserts(cfg, failures, {"speedup"});
}

// ---------------------------------------------------------------------------

void cmd_grad_check(const ExperimentConfig& cfg) {
  const auto& g = cfg.grad_check;
  if (g.points == 0 || g.num_classes < 2 || g.num_samples == 0 || g.batch_size == 0)
    throw DataError("grad-check needs points, K, batch >= 1 and C >= 2");
  const NoiseDistribution noise = log_uniform(g.num_classes);
  const AliasTable alias = build_alias(noise);
  Rng rng(cfg.train.seed);

  ModelConfig mc;
  mc.variant = ModelVariant::kFeedforward;
  mc.order = 2;
  mc.d_emb = 3;
  mc.d_hidden = 5;
  mc.init_scale = 0.5;

  json rows = json::array();
  std::ostringstream tsv;
  tsv << "criterion\tpoints\tmax_rel_error_criterion\tmax_rel_error_model\n";
  double worst = 0.0;
  for (CriterionKind kind : kinds_or_all(g.criteria)) {
    CriterionConfig crit = cfg.train.criterion;
    crit.kind = kind;
    crit.num_samples = g.num_samples;
    crit = crit.resolved(g.num_classes);
    double max_crit = 0.0, max_model = 0.0;
    for (std::size_t pt = 0; pt < g.points; ++pt) {
      if (is_sampled(kind)) {
        const ScoreBundle b = random_bundle(g.batch_size, g.num_samples, noise, rng);
        max_crit = std::max(max_crit, grad_check(crit, b, g.epsilon, g.floor));
      } else {
        Matrix scores(g.batch_size, g.num_classes);
        for (double& s : scores.data()) s = 2.0 * rng.normal();
        std::vector<TokenId> targets(g.batch_size);
        for (auto& t : targets) t = static_cast<TokenId>(rng.below(g.num_classes));
        max_crit = std::max(max_crit, grad_check_full(kind, scores, targets, g.epsilon,
                                                      crit.mse_rival_scale, g.floor));
      }
      mc.seed = rng.next();
      ModelParams params = init_params(mc, g.num_classes);
      for (double& b : params.output_b) b = rng.uniform(-3.0, 0.0);
      TrainingBatch batch;
      batch.order = mc.order;
      for (std::size_t i = 0; i < g.batch_size * mc.order; ++i)
        batch.contexts.push_back(static_cast<TokenId>(rng.below(g.num_classes)));
      for (std::size_t i = 0; i < g.batch_size; ++i)
        batch.targets.push_back(static_cast<TokenId>(rng.below(g.num_classes)));
      const SampleSet samples = draw_shared(alias, g.num_samples, rng);
      const auto res = model_grad_check(params, crit, noise, batch, samples, g.epsilon, 64, rng, g.floor);
      max_model = std::max(max_model, res.max_rel_error);
    }
    worst = std::max({worst, max_crit, max_model});
    rows.push_back({{"criterion", to_string(kind)},
                    {"points", g.points},
                    {"max_rel_error_criterion", max_crit},
                    {"max_rel_error_model", max_model}});
    tsv << to_string(kind) << '\t' << g.points << '\t' << fmt(max_crit) << '\t' << fmt(max_model)
        << '\n';
  }
  json report = envelope("grad-check", cfg);
  report["results"] = rows;
  const fs::path dir = out_dir(cfg);
  write_file(dir / "grad_check_report.json", report.dump(2) + "\n");
  write_file(dir / "grad_check_report.tsv", tsv.str());
  std::cout << tsv.str();

  if (cfg.asserts.empty()) return;
  std::vector<std::string> failures;
  check_assert(cfg, "rel", worst, failures);
  finish_asserts(cfg, failures, {"rel"});
}

}  // namespace samplecrit::cli
