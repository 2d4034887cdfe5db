#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "macpipe/corpus_io.hpp"
#include "macpipe/rng.hpp"

namespace macpipe {

// Cosine similarity; both vectors must be nonzero and of equal dimension.
double cosine(std::span<const double> u, std::span<const double> v);

struct SynonymQuery {
  std::string word;
  // 0 means unconstrained; otherwise candidates must tokenize UNK-free to
  // exactly this many tokens.
  int required_token_length = 0;
  int top_k = 10;
  double min_similarity = 0.5;
};

struct SynonymResult {
  // (word, similarity), descending similarity; ties by table entry order.
  std::vector<std::pair<std::string, double>> candidates;
  bool degraded = false;  // true iff candidates is empty
};

// Exhaustive cosine-similarity lookup over an embedding table. Token lengths
// per entry are precomputed against the vocab at construction. Immutable
// afterwards.
class SynonymIndex {
 public:
  SynonymIndex(const EmbeddingTable& table, const Vocab& vocab);

  SynonymResult nearest(const SynonymQuery& query) const;

  // Uniform draw among table words whose UNK-free tokenization has `length`
  // tokens, excluding `exclude_word`. Returns -1 when no such word exists.
  std::int64_t random_word_with_length(int length, std::string_view exclude_word,
                                       Pcg32& rng) const;

  const EmbeddingTable& table() const { return *table_; }
  // Token ids of entry i; empty when the word tokenizes with UNK.
  std::span<const TokenId> token_ids_at(std::size_t i) const;
  int token_length_at(std::size_t i) const { return token_lengths_[i]; }

 private:
  const EmbeddingTable* table_;
  std::vector<int> token_lengths_;          // -1 when tokenization hits UNK
  std::vector<std::vector<TokenId>> ids_;   // empty when UNK
  std::map<int, std::vector<std::int64_t>> by_length_;
};

// Optional precomputed candidate lists, persisted as JSON lines. The first
// line holds the source embedding file hash; a cache whose hash no longer
// matches the embedding file is discarded and rebuilt.
struct SynonymCache {
  std::uint64_t embedding_hash = 0;
  std::map<std::string, std::vector<std::pair<std::string, double>>> entries;

  static std::optional<SynonymCache> load(const std::string& path);
  void save(const std::string& path) const;
};

}  // namespace macpipe
