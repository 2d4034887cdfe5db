#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "macpipe/synonym_index.hpp"
#include "macpipe/wordpiece.hpp"

using namespace macpipe;

TEST_CASE("cosine basics") {
  std::vector<double> e1 = {1, 0}, e2 = {0, 1}, diag = {1, 1};
  CHECK(cosine(e1, e1) == doctest::Approx(1.0));
  CHECK(cosine(e1, e2) == doctest::Approx(0.0));
  CHECK(cosine(diag, e1) == doctest::Approx(0.70710678).epsilon(1e-6));
  CHECK(cosine(e1, e2) == cosine(e2, e1));
  std::vector<double> d3 = {1, 2, 3};
  CHECK_THROWS_AS(cosine(e1, d3), PipelineError);
}

namespace {

// Random word universe with varied token lengths; words containing '0' hit
// UNK under the letters vocab.
EmbeddingTable random_table(std::size_t n, int dim, std::uint64_t seed) {
  Pcg32 rng(seed);
  std::set<std::string> seen;
  std::vector<std::pair<std::string, std::vector<double>>> entries;
  while (entries.size() < n) {
    std::size_t len = 1 + rng.bounded(4);
    std::string word;
    for (std::size_t i = 0; i < len; ++i) {
      if (rng.bounded(20) == 0)
        word.push_back('0');
      else
        word.push_back(static_cast<char>('a' + rng.bounded(26)));
    }
    if (!seen.insert(word).second) continue;
    std::vector<double> vec(static_cast<std::size_t>(dim));
    double norm = 0.0;
    for (double& x : vec) {
      x = rng.next_double() * 2.0 - 1.0;
      norm += x * x;
    }
    if (norm == 0.0) continue;
    entries.emplace_back(word, vec);
  }
  return EmbeddingTable::from_entries(dim, std::move(entries));
}

// Test-side selection: full stable sort over all entries with the same
// filters, ties by table order.
std::vector<std::pair<std::string, double>> brute_force(const SynonymQuery& q,
                                                        const EmbeddingTable& table,
                                                        const Vocab& vocab) {
  std::int64_t self = table.find(q.word);
  if (self < 0) return {};
  struct Row {
    double sim;
    std::int64_t idx;
  };
  std::vector<Row> rows;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (static_cast<std::int64_t>(i) == self) continue;
    if (q.required_token_length > 0) {
      std::vector<TokenId> ids = tokenize_word(table.word_at(i), vocab);
      if (ids.size() != static_cast<std::size_t>(q.required_token_length)) continue;
      if (std::find(ids.begin(), ids.end(), vocab.unk_id()) != ids.end()) continue;
    }
    double sim = cosine(table.vector_at(static_cast<std::size_t>(self)), table.vector_at(i));
    if (sim < q.min_similarity) continue;
    rows.push_back({sim, static_cast<std::int64_t>(i)});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    return a.idx < b.idx;
  });
  if (rows.size() > static_cast<std::size_t>(q.top_k))
    rows.resize(static_cast<std::size_t>(q.top_k));
  std::vector<std::pair<std::string, double>> out;
  for (const Row& r : rows) out.emplace_back(table.word_at(static_cast<std::size_t>(r.idx)), r.sim);
  return out;
}

}  // namespace

TEST_CASE("nearest matches the brute-force scan exactly") {
  Vocab vocab = testutil::make_letters_vocab();
  EmbeddingTable table = random_table(2000, 6, 11);
  SynonymIndex index(table, vocab);
  Pcg32 rng(77);
  const double sims[] = {-1.0, 0.0, 0.3, 0.5};
  for (int i = 0; i < 300; ++i) {
    SynonymQuery q;
    q.word = table.word_at(rng.bounded(static_cast<std::uint32_t>(table.size())));
    q.top_k = 1 + rng.bounded(15);
    q.min_similarity = sims[rng.bounded(4)];
    q.required_token_length = static_cast<int>(rng.bounded(4));  // 0 = unconstrained
    SynonymResult got = index.nearest(q);
    std::vector<std::pair<std::string, double>> want = brute_force(q, table, vocab);
    CHECK(got.candidates == want);
    CHECK(got.degraded == want.empty());
  }
}

TEST_CASE("query word absent from the table degrades") {
  testutil::SynonymFixture fx = testutil::make_synonym_fixture(4, 3, 5);
  Vocab vocab = testutil::fixture_vocab(fx);
  EmbeddingTable table = testutil::fixture_table(fx);
  SynonymIndex index(table, vocab);
  SynonymQuery q;
  q.word = "nosuchword";
  SynonymResult res = index.nearest(q);
  CHECK(res.degraded);
  CHECK(res.candidates.empty());
}

TEST_CASE("query word never appears among its candidates") {
  testutil::SynonymFixture fx = testutil::make_synonym_fixture(3, 6, 9);
  Vocab vocab = testutil::fixture_vocab(fx);
  EmbeddingTable table = testutil::fixture_table(fx);
  SynonymIndex index(table, vocab);
  for (std::size_t i = 0; i < table.size(); ++i) {
    SynonymQuery q;
    q.word = table.word_at(i);
    q.min_similarity = -1.0;
    q.top_k = static_cast<int>(table.size());
    SynonymResult res = index.nearest(q);
    for (const auto& [cand, sim] : res.candidates) CHECK(cand != q.word);
  }
}

TEST_CASE("unconstrained candidate count is min(top_k, eligible)") {
  testutil::SynonymFixture fx = testutil::make_synonym_fixture(2, 4, 13);
  Vocab vocab = testutil::fixture_vocab(fx);
  EmbeddingTable table = testutil::fixture_table(fx);
  SynonymIndex index(table, vocab);
  SynonymQuery q;
  q.word = table.word_at(0);
  q.min_similarity = -1.0;
  q.top_k = 3;
  CHECK(index.nearest(q).candidates.size() == 3);
  q.top_k = 1000;
  CHECK(index.nearest(q).candidates.size() == table.size() - 1);
}

TEST_CASE("family fixture puts same-family words on top") {
  testutil::SynonymFixture fx = testutil::make_synonym_fixture(5, 4, 21);
  Vocab vocab = testutil::fixture_vocab(fx);
  EmbeddingTable table = testutil::fixture_table(fx);
  SynonymIndex index(table, vocab);
  SynonymQuery q;
  q.word = "s2m0";
  q.top_k = 3;
  SynonymResult res = index.nearest(q);
  REQUIRE(!res.candidates.empty());
  for (const auto& [cand, sim] : res.candidates) {
    CHECK(cand.find('2') != std::string::npos);  // family tag survives
    CHECK(sim >= 0.5);
  }
  // Same-length constraint keeps only single-token family members.
  q.required_token_length = 1;
  res = index.nearest(q);
  REQUIRE(!res.candidates.empty());
  for (const auto& [cand, sim] : res.candidates) CHECK(cand.substr(0, 1) == "s");
}

TEST_CASE("random_word_with_length draws from the right bucket") {
  testutil::SynonymFixture fx = testutil::make_synonym_fixture(3, 3, 31);
  Vocab vocab = testutil::fixture_vocab(fx);
  EmbeddingTable table = testutil::fixture_table(fx);
  SynonymIndex index(table, vocab);
  Pcg32 rng(4);
  for (int i = 0; i < 50; ++i) {
    std::int64_t pick = index.random_word_with_length(2, "s0m0", rng);
    REQUIRE(pick >= 0);
    CHECK(index.token_length_at(static_cast<std::size_t>(pick)) == 2);
  }
  CHECK(index.random_word_with_length(7, "s0m0", rng) == -1);
}

TEST_CASE("synonym cache round-trips and carries the embedding hash") {
  testutil::TempDir dir;
  SynonymCache cache;
  cache.embedding_hash = 0xDEADBEEFCAFEF00Dull;
  cache.entries["alpha"] = {{"beta", 0.9}, {"gamma", 0.5}};
  cache.entries["delta"] = {};
  cache.save(dir.file("cache.jsonl"));
  auto loaded = SynonymCache::load(dir.file("cache.jsonl"));
  REQUIRE(loaded.has_value());
  CHECK(loaded->embedding_hash == cache.embedding_hash);
  CHECK(loaded->entries == cache.entries);
  CHECK(!SynonymCache::load(dir.file("missing.jsonl")).has_value());
}
