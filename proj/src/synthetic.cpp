#include "samplecrit/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "samplecrit/error.hpp"
#include "samplecrit/rng.hpp"

namespace samplecrit {

using nlohmann::json;

namespace {

void check_distribution(std::span<const double> p, const std::string& what) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(what + " has a negative or non-finite entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-12) throw Error(what + " is not stochastic");
}

void normalize_in_place(std::span<double> v) {
  long double s = 0.0L;
  for (double x : v) s += x;
  for (double& x : v) x = static_cast<double>(x / s);
}

std::size_t ipow(std::size_t base, std::size_t e) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < e; ++i) r *= base;
  return r;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

std::size_t draw_from_cdf(std::span<const double> cdf, double u) {
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u * cdf.back());
  if (it == cdf.end()) --it;
  return static_cast<std::size_t>(it - cdf.begin());
}

}  // namespace

void MarkovSpec::validate() const {
  if (order == 0) throw Error("markov order must be positive");
  if (num_states == 0) throw Error("markov spec has no states");
  if (transition.cols() != num_states || transition.rows() != ipow(num_states, order))
    throw Error("transition matrix has wrong shape");
  if (initial.size() != num_states) throw Error("initial distribution has wrong size");
  check_distribution(initial, "initial distribution");
  for (std::size_t h = 0; h < transition.rows(); ++h)
    check_distribution(transition.row(h), "transition row " + std::to_string(h));
}

std::size_t MarkovSpec::shift(std::size_t h, std::size_t next) const {
  return (h * num_states + next) % transition.rows();
}

void MarkovSpec::save(const std::filesystem::path& path) const {
  json j;
  j["order"] = order;
  j["num_states"] = num_states;
  j["initial"] = initial;
  j["transition"] = transition.data();
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump();
}

MarkovSpec MarkovSpec::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("markov spec not found: " + path.string());
  json j = json::parse(is);
  MarkovSpec s;
  s.order = j.at("order").get<std::size_t>();
  s.num_states = j.at("num_states").get<std::size_t>();
  s.initial = j.at("initial").get<std::vector<double>>();
  auto flat = j.at("transition").get<std::vector<double>>();
  const std::size_t rows = ipow(s.num_states, s.order);
  if (flat.size() != rows * s.num_states) throw DataError("transition matrix has wrong size");
  s.transition = Matrix(rows, s.num_states);
  s.transition.data() = std::move(flat);
  s.validate();
  return s;
}

MarkovSpec random_markov_spec(std::size_t num_states, std::size_t order, std::uint64_t seed,
                              const RandomSpecOptions& opts) {
  if (num_states == 0 || order == 0) throw Error("random spec needs states and order");
  const std::size_t histories = ipow(num_states, order);
  if (histories * num_states > 50'000'000) throw Error("random spec too large");
  Rng rng(seed);
  const std::size_t r = std::max<std::size_t>(opts.rank, 1);
  Matrix u(num_states, r), v(num_states, r);
  for (double& x : u.data()) x = rng.normal();
  for (double& x : v.data()) x = rng.normal();
  const double scale = opts.strength / std::sqrt(static_cast<double>(r));

  std::vector<double> bias(num_states);
  for (std::size_t j = 0; j < num_states; ++j) bias[j] = -opts.zipf * std::log(double(j + 1));

  MarkovSpec spec;
  spec.order = order;
  spec.num_states = num_states;
  spec.transition = Matrix(histories, num_states);
  std::vector<double> uh(r);
  for (std::size_t h = 0; h < histories; ++h) {
    // Older states contribute with geometrically decaying weight.
    std::fill(uh.begin(), uh.end(), 0.0);
    std::size_t rest = h;
    double w = 1.0;
    for (std::size_t i = 0; i < order; ++i) {
      const std::size_t s = rest % num_states;
      rest /= num_states;
      for (std::size_t k = 0; k < r; ++k) uh[k] += w * u(s, k);
      w *= 0.5;
    }
    auto row = spec.transition.row(h);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < num_states; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < r; ++k) dot += uh[k] * v(j, k);
      row[j] = bias[j] + scale * dot;
      mx = std::max(mx, row[j]);
    }
    for (double& x : row) x = std::exp(x - mx);
    normalize_in_place(row);
  }
  spec.initial.resize(num_states);
  for (std::size_t j = 0; j < num_states; ++j) spec.initial[j] = std::exp(bias[j]);
  normalize_in_place(spec.initial);
  spec.validate();
  return spec;
}

std::string state_token(std::size_t state) { return "w" + std::to_string(state); }

std::vector<std::string> generate_lines(const MarkovSpec& spec, std::size_t n_tokens,
                                        std::uint64_t seed, double end_prob) {
  spec.validate();
  if (n_tokens == 0) throw Error("n_tokens must be positive");
  if (!(end_prob >= 0.0 && end_prob < 1.0)) throw Error("end_prob must be in [0, 1)");
  const std::size_t c = spec.num_states;
  Matrix cdf(spec.num_histories(), c);
  for (std::size_t h = 0; h < cdf.rows(); ++h) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) cdf(h, j) = acc += spec.transition(h, j);
  }
  std::vector<double> init_cdf(c);
  double acc = 0.0;
  for (std::size_t j = 0; j < c; ++j) init_cdf[j] = acc += spec.initial[j];

  Rng rng(seed);
  std::vector<std::string> lines;
  std::size_t emitted = 0;
  while (emitted < n_tokens) {
    std::string line;
    std::size_t s = draw_from_cdf(init_cdf, rng.uniform());
    std::size_t h = s;
    line += state_token(s);
    ++emitted;
    while (emitted < n_tokens) {
      if (rng.uniform() < end_prob) break;
      s = draw_from_cdf(cdf.row(h), rng.uniform());
      h = spec.shift(h, s);
      line += ' ';
      line += state_token(s);
      ++emitted;
    }
    lines.push_back(std::move(line));
  }
  return lines;
}

GroundTruth::GroundTruth(std::shared_ptr<const MarkovSpec> spec, const Vocabulary& vocab,
                         double end_prob)
    : spec_(std::move(spec)),
      vocab_size_(vocab.size()),
      bos_(vocab.bos()),
      eos_(vocab.eos()),
      unk_(vocab.unk()),
      end_prob_(end_prob) {
  token_of_state_.resize(spec_->num_states);
  state_of_token_.assign(vocab.size(), -1);
  for (std::size_t s = 0; s < spec_->num_states; ++s) {
    const auto tok = state_token(s);
    if (vocab.contains(tok)) {
      token_of_state_[s] = vocab.id_of(tok);
      state_of_token_[static_cast<std::size_t>(token_of_state_[s])] = static_cast<long>(s);
    } else {
      token_of_state_[s] = unk_;
    }
  }
}

std::vector<double> GroundTruth::row(std::span<const TokenId> context) const {
  if (context.size() != spec_->order) throw Error("context length does not match chain order");
  std::vector<double> p(vocab_size_, 0.0);
  std::size_t lead = 0;
  while (lead < context.size() && context[lead] == bos_) ++lead;
  if (lead == context.size()) {
    for (std::size_t s = 0; s < spec_->num_states; ++s)
      p[static_cast<std::size_t>(token_of_state_[s])] += spec_->initial[s];
    return p;
  }
  std::size_t h = 0;
  for (std::size_t i = 0; i < context.size(); ++i) {
    long s = 0;
    if (i >= lead) {
      const auto id = static_cast<std::size_t>(context[i]);
      if (id >= state_of_token_.size() || state_of_token_[id] < 0) throw Error("unseen context");
      s = state_of_token_[id];
    }
    h = h * spec_->num_states + static_cast<std::size_t>(s);
  }
  p[static_cast<std::size_t>(eos_)] = end_prob_;
  for (std::size_t s = 0; s < spec_->num_states; ++s)
    p[static_cast<std::size_t>(token_of_state_[s])] += (1.0 - end_prob_) * spec_->transition(h, s);
  return p;
}

std::vector<std::vector<TokenId>> GroundTruth::contexts() const {
  const std::size_t k = spec_->order;
  std::vector<TokenId> words;
  for (std::size_t s = 0; s < spec_->num_states; ++s)
    if (token_of_state_[s] != unk_) words.push_back(token_of_state_[s]);
  std::vector<std::vector<TokenId>> out;
  out.emplace_back(k, bos_);
  for (std::size_t t = 1; t <= k; ++t) {
    std::vector<std::size_t> digits(t, 0);
    const std::size_t total = ipow(words.size(), t);
    for (std::size_t n = 0; n < total; ++n) {
      std::vector<TokenId> ctx(k - t, bos_);
      std::size_t rest = n;
      std::vector<TokenId> tail(t);
      for (std::size_t i = t; i-- > 0;) {
        tail[i] = words[rest % words.size()];
        rest /= words.size();
      }
      ctx.insert(ctx.end(), tail.begin(), tail.end());
      out.push_back(std::move(ctx));
    }
  }
  return out;
}

void GroundTruth::save_json(const std::filesystem::path& path, const Vocabulary& vocab) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  // Streamed by hand: the full map can hold millions of numbers.
  os << '{';
  bool first = true;
  for (const auto& ctx : contexts()) {
    std::string key;
    for (std::size_t i = 0; i < ctx.size(); ++i) {
      if (i) key += ' ';
      key += vocab.token(ctx[i]);
    }
    if (!first) os << ',';
    first = false;
    os << json(key).dump() << ':' << json(row(ctx)).dump();
  }
  os << "}\n";
  if (!os) throw DataError("cannot write " + path.string());
}

SyntheticData generate_synthetic(const MarkovSpec& spec, std::size_t n_tokens, std::uint64_t seed,
                                 double end_prob) {
  auto lines = generate_lines(spec, n_tokens, seed, end_prob);
  auto vocab = build_vocab(lines, spec.num_states + 3);
  auto corpus = encode(vocab, lines);
  auto shared = std::make_shared<const MarkovSpec>(spec);
  GroundTruth truth(shared, vocab, end_prob);
  return SyntheticData{std::move(vocab), std::move(corpus), std::move(lines), shared,
                       std::move(truth)};
}

double entropy_rate(const MarkovSpec& spec, double end_prob) {
  spec.validate();
  if (!(end_prob > 0.0 && end_prob < 1.0)) throw Error("entropy rate needs end_prob in (0, 1)");
  const std::size_t nh = spec.num_histories();
  const std::size_t c = spec.num_states;
  const double keep = 1.0 - end_prob;

  std::vector<double> row_entropy(nh);
  for (std::size_t h = 0; h < nh; ++h) row_entropy[h] = entropy(spec.transition.row(h));
  const double binary = -end_prob * std::log(end_prob) - keep * std::log(keep);

  // Expected visits per sentence to each history: sum_t keep^t * pi0 T^t.
  std::vector<double> cur(nh, 0.0), next(nh), visits(nh, 0.0);
  for (std::size_t s = 0; s < c; ++s) cur[s] += spec.initial[s];
  double mass = 1.0;
  while (mass > 1e-16) {
    for (std::size_t h = 0; h < nh; ++h) visits[h] += cur[h];
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t h = 0; h < nh; ++h) {
      if (cur[h] == 0.0) continue;
      const double w = keep * cur[h];
      auto row = spec.transition.row(h);
      const std::size_t base = (h * c) % nh;
      for (std::size_t s = 0; s < c; ++s) next[base + s] += w * row[s];
    }
    cur.swap(next);
    mass *= keep;
  }
  double total = entropy(spec.initial);
  double words = 0.0;
  for (std::size_t h = 0; h < nh; ++h) {
    total += visits[h] * (binary + keep * row_entropy[h]);
    words += visits[h];
  }
  return total / (1.0 + words);
}

}  // namespace samplecrit
