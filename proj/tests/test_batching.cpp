#include <doctest.h>

#include <algorithm>
#include <string>
#include <tuple>
#include <vector>

#include "samplecrit/batching.hpp"
#include "samplecrit/error.hpp"
#include "samplecrit/vocab.hpp"

using namespace samplecrit;

namespace {

// Ten predicted positions: 3 sentences of 2, 2 and 3 words plus </s>.
struct Fixture {
  std::vector<std::string> lines = {"a b", "b c", "a c b"};
  Vocabulary vocab = build_vocab(lines, 10);
  Corpus corpus = encode(vocab, lines);
  PositionTable table = flatten(corpus, 2, vocab.bos());
};

std::vector<std::tuple<TokenId, TokenId, TokenId>> as_triples(const TrainingBatch& b) {
  std::vector<std::tuple<TokenId, TokenId, TokenId>> out;
  for (std::size_t i = 0; i < b.size(); ++i)
    out.emplace_back(b.context(i)[0], b.context(i)[1], b.targets[i]);
  return out;
}

}  // namespace

TEST_SUITE("batching") {

TEST_CASE("ten positions in batches of four") {
  Fixture f;
  REQUIRE(f.table.size() == 10);
  BatchIterator it(f.table, 4, 1);
  TrainingBatch b;
  std::vector<std::size_t> sizes;
  while (it.next(b)) sizes.push_back(b.size());
  CHECK(sizes == std::vector<std::size_t>{4, 4, 2});
  CHECK(it.batches_per_epoch() == 3);
}

TEST_CASE("a single position is a single batch") {
  std::vector<std::string> lines = {"a"};
  Vocabulary v = build_vocab(lines, 10);
  Corpus c = encode(v, lines);
  c.sequences[0].pop_back();  // drop </s>: one predicted position left
  PositionTable t = flatten(c, 1, v.bos());
  REQUIRE(t.size() == 1);
  BatchIterator it(t, 64, 1);
  TrainingBatch b;
  CHECK(it.next(b));
  CHECK(b.size() == 1);
  CHECK_FALSE(it.next(b));
}

TEST_CASE("an epoch partitions the positions") {
  Fixture f;
  std::vector<std::tuple<TokenId, TokenId, TokenId>> expected, seen;
  for (std::size_t i = 0; i < f.table.size(); ++i)
    expected.emplace_back(f.table.context(i)[0], f.table.context(i)[1], f.table.targets[i]);
  BatchIterator it(f.table, 3, 9);
  TrainingBatch b;
  while (it.next(b)) {
    auto t = as_triples(b);
    seen.insert(seen.end(), t.begin(), t.end());
  }
  std::sort(expected.begin(), expected.end());
  std::sort(seen.begin(), seen.end());
  CHECK(seen == expected);
}

TEST_CASE("same seed, same batches; epochs are reshuffled") {
  Fixture f;
  BatchIterator x(f.table, 4, 5), y(f.table, 4, 5);
  TrainingBatch a, b;
  std::vector<std::tuple<TokenId, TokenId, TokenId>> first, second;
  for (int epoch = 0; epoch < 2; ++epoch) {
    auto& dst = epoch == 0 ? first : second;
    while (x.next(a)) {
      REQUIRE(y.next(b));
      CHECK(as_triples(a) == as_triples(b));
      auto t = as_triples(a);
      dst.insert(dst.end(), t.begin(), t.end());
    }
    CHECK_FALSE(y.next(b));
  }
  CHECK(first != second);
}

TEST_CASE("unshuffled iteration follows corpus order") {
  Fixture f;
  BatchIterator it(f.table, 100, 1, false);
  TrainingBatch b;
  REQUIRE(it.next(b));
  CHECK(b.targets == f.table.targets);
}

TEST_CASE("empirical posterior of a context") {
  std::vector<std::string> lines = {"a b a b a c"};
  Vocabulary v = build_vocab(lines, 10);
  Corpus c = encode(v, lines);
  std::vector<TokenId> ctx = {v.id_of("a")};
  auto p = empirical_posterior(c, ctx, v.size(), v.bos());
  CHECK(p[v.id_of("b")] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(p[v.id_of("c")] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  std::vector<TokenId> once = {v.id_of("c")};
  auto q = empirical_posterior(c, once, v.size(), v.bos());
  CHECK(q[v.eos()] == 1.0);

  std::vector<TokenId> never = {v.eos()};
  CHECK_THROWS_WITH(empirical_posterior(c, never, v.size(), v.bos()), "unseen context");
}

}
