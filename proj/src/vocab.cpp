#include "samplecrit/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "samplecrit/error.hpp"

namespace samplecrit {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(std::move(tok));
  return out;
}

bool is_reserved(std::string_view t) { return t == kBos || t == kEos || t == kUnk; }

}  // namespace

Vocabulary Vocabulary::from_counts(std::vector<std::pair<std::string, std::uint64_t>> counts) {
  for (auto r : {kBos, kEos, kUnk}) {
    bool found = std::any_of(counts.begin(), counts.end(),
                             [&](const auto& p) { return p.first == r; });
    if (!found) counts.emplace_back(std::string(r), 0);
  }
  std::sort(counts.begin(), counts.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (auto& [tok, c] : counts) {
    v.tokens_.push_back(std::move(tok));
    v.counts_.push_back(c);
  }
  v.index();
  return v;
}

void Vocabulary::index() {
  ids_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, fresh] = ids_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!fresh) throw DataError("duplicate token in vocabulary: " + tokens_[i]);
  }
  auto must = [&](std::string_view t) {
    auto it = ids_.find(std::string(t));
    if (it == ids_.end()) throw DataError("vocabulary lacks reserved token " + std::string(t));
    return it->second;
  };
  bos_ = must(kBos);
  eos_ = must(kEos);
  unk_ = must(kUnk);
}

TokenId Vocabulary::id_of(std::string_view tok) const {
  auto it = ids_.find(std::string(tok));
  return it == ids_.end() ? unk_ : it->second;
}

bool Vocabulary::contains(std::string_view tok) const {
  return ids_.find(std::string(tok)) != ids_.end();
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) os << tokens_[i] << '\t' << counts_[i] << '\n';
  if (!os) throw DataError("cannot write " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("vocab not found: " + path.string());
  Vocabulary v;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    std::uint64_t c = 0;
    if (tab != std::string::npos) {
      c = std::stoull(line.substr(tab + 1));
      line.resize(tab);
    }
    v.tokens_.push_back(line);
    v.counts_.push_back(c);
  }
  v.index();
  return v;
}

Vocabulary build_vocab(std::span<const std::string> lines, std::size_t max_size,
                       std::uint64_t min_count) {
  if (max_size < 3) throw Error("max_size must be at least 3");
  std::map<std::string, std::uint64_t> counts;
  std::uint64_t sequences = 0;
  for (const auto& line : lines) {
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    ++sequences;
    for (auto& t : toks) ++counts[t];
  }
  if (sequences == 0) throw DataError("empty corpus");

  std::vector<std::pair<std::string, std::uint64_t>> words;
  for (auto& [t, c] : counts) {
    if (!is_reserved(t) && c >= min_count) words.emplace_back(t, c);
  }
  std::sort(words.begin(), words.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t keep = std::min(words.size(), max_size - 3);

  std::uint64_t unk = counts.count(std::string(kUnk)) ? counts[std::string(kUnk)] : 0;
  for (std::size_t i = keep; i < words.size(); ++i) unk += words[i].second;
  for (auto& [t, c] : counts) {
    if (!is_reserved(t) && c < min_count) unk += c;
  }
  words.resize(keep);
  words.emplace_back(std::string(kBos), 0);
  words.emplace_back(std::string(kEos), sequences);
  words.emplace_back(std::string(kUnk), unk);
  return Vocabulary::from_counts(std::move(words));
}

std::size_t Corpus::num_positions() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.empty() ? 0 : s.size() - 1;
  return n;
}

Corpus encode(const Vocabulary& vocab, std::span<const std::string> lines) {
  Corpus c;
  for (const auto& line : lines) {
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    std::vector<TokenId> seq;
    seq.reserve(toks.size() + 2);
    seq.push_back(vocab.bos());
    for (auto& t : toks) seq.push_back(vocab.id_of(t));
    seq.push_back(vocab.eos());
    c.sequences.push_back(std::move(seq));
  }
  return c;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("corpus not found: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(std::move(line));
  return lines;
}

void save_corpus(const Vocabulary& vocab, const Corpus& corpus,
                 const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto& seq : corpus.sequences) {
    // Drop the leading <s> and trailing </s>.
    for (std::size_t i = 1; i + 1 < seq.size(); ++i) {
      if (i > 1) os << ' ';
      os << vocab.token(seq[i]);
    }
    os << '\n';
  }
  if (!os) throw DataError("cannot write " + path.string());
}

std::vector<TokenId> context_at(std::span<const TokenId> seq, std::size_t pos,
                                std::size_t order, TokenId bos) {
  std::vector<TokenId> ctx(order, bos);
  for (std::size_t j = 0; j < order; ++j) {
    // ctx[order-1] is the immediately preceding token.
    const std::size_t back = order - j;
    if (pos >= back) ctx[j] = seq[pos - back];
  }
  return ctx;
}

}  // namespace samplecrit
