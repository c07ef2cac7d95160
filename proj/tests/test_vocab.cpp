#include <doctest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "samplecrit/error.hpp"
#include "samplecrit/rng.hpp"
#include "samplecrit/vocab.hpp"

using namespace samplecrit;

TEST_SUITE("vocab") {

TEST_CASE("two words plus the reserved tokens") {
  std::vector<std::string> lines = {"a a b"};
  Vocabulary v = build_vocab(lines, 10);
  CHECK(v.size() == 5);
  CHECK(v.id_of("a") < v.id_of("b"));
  CHECK(v.count(v.id_of("a")) == 2);
  CHECK(v.contains(std::string(kBos)));
  CHECK(v.contains(std::string(kEos)));
  CHECK(v.contains(std::string(kUnk)));
  CHECK(v.id_of("zzz") == v.unk());
}

TEST_CASE("empty input is rejected") {
  std::vector<std::string> none;
  CHECK_THROWS_WITH_AS(build_vocab(none, 10), "empty corpus", DataError);
  std::vector<std::string> blank = {"", "   "};
  CHECK_THROWS_AS(build_vocab(blank, 10), DataError);
}

TEST_CASE("ids round-trip through the token table") {
  std::vector<std::string> lines = {"the cat sat on the mat", "a dog sat", "the end"};
  Vocabulary v = build_vocab(lines, 100);
  for (std::size_t i = 0; i < v.size(); ++i)
    CHECK(v.id_of(v.tokens()[i]) == static_cast<TokenId>(i));
}

TEST_CASE("ids are ranked by count") {
  std::vector<std::string> lines = {"x y y z z z", "z"};
  Vocabulary v = build_vocab(lines, 100);
  CHECK(v.id_of("z") < v.id_of("y"));
  CHECK(v.id_of("y") < v.id_of("x"));
}

TEST_CASE("max size caps the vocabulary and the rest maps to unk") {
  std::vector<std::string> lines;
  for (int i = 0; i < 50; ++i)
    for (int r = 0; r <= i; ++r) lines.push_back("w" + std::to_string(i));
  Vocabulary v = build_vocab(lines, 13);
  CHECK(v.size() == 13);
  // The ten most frequent words survive.
  CHECK(v.contains("w49"));
  CHECK(v.contains("w40"));
  CHECK_FALSE(v.contains("w39"));
  CHECK(v.id_of("w0") == v.unk());
}

TEST_CASE("a million lines stay within a 200k vocabulary") {
  Rng rng(3);
  std::vector<std::string> lines;
  lines.reserve(1000000);
  for (int i = 0; i < 1000000; ++i)
    lines.push_back("t" + std::to_string(rng.below(400000)) + " t" +
                    std::to_string(rng.below(400000)));
  Vocabulary v = build_vocab(lines, 200000);
  CHECK(v.size() <= 200000);
  CHECK(v.size() >= 199000);
}

TEST_CASE("encode wraps sentences in markers") {
  std::vector<std::string> lines = {"a a b", "", "b"};
  Vocabulary v = build_vocab(lines, 10);
  Corpus c = encode(v, lines);
  REQUIRE(c.sequences.size() == 2);
  CHECK(c.sequences[0].front() == v.bos());
  CHECK(c.sequences[0].back() == v.eos());
  CHECK(c.sequences[0].size() == 5);
  CHECK(c.num_positions() == 4 + 2);
}

TEST_CASE("contexts are padded with bos") {
  std::vector<TokenId> seq = {0, 5, 6, 7};
  CHECK(context_at(seq, 1, 3, 0) == std::vector<TokenId>{0, 0, 0});
  CHECK(context_at(seq, 2, 3, 0) == std::vector<TokenId>{0, 0, 5});
  CHECK(context_at(seq, 3, 2, 0) == std::vector<TokenId>{5, 6});
}

TEST_CASE("save and load preserve ids and counts") {
  std::vector<std::string> lines = {"one two two three three three"};
  Vocabulary v = build_vocab(lines, 10);
  auto path = std::filesystem::temp_directory_path() / "samplecrit_vocab_test.tsv";
  v.save(path);
  Vocabulary w = Vocabulary::load(path);
  std::filesystem::remove(path);
  CHECK(w.tokens() == v.tokens());
  CHECK(w.counts() == v.counts());
  CHECK(w.bos() == v.bos());
}

}
