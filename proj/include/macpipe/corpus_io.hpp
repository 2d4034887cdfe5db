#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "macpipe/common.hpp"

namespace macpipe {

// Token <-> id table. Line index in the vocab file is the id.
class Vocab {
 public:
  static Vocab from_file(const std::string& path);
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token_of(TokenId id) const;
  // -1 when the token is not in the table.
  TokenId lookup(std::string_view token) const;
  bool contains(std::string_view token) const { return lookup(token) >= 0; }

  TokenId pad_id() const { return pad_; }
  TokenId unk_id() const { return unk_; }
  TokenId cls_id() const { return cls_; }
  TokenId sep_id() const { return sep_; }
  TokenId mask_id() const { return mask_; }
  bool is_special(TokenId id) const {
    return id == pad_ || id == unk_ || id == cls_ || id == sep_ || id == mask_;
  }

 private:
  Vocab() = default;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  TokenId pad_ = -1, unk_ = -1, cls_ = -1, sep_ = -1, mask_ = -1;
};

// One pre-segmented sentence: words with no whitespace, none empty.
struct Sentence {
  std::vector<std::string> words;
  bool operator==(const Sentence&) const = default;
};

struct Document {
  std::vector<Sentence> sentences;
  std::size_t source_index = 0;
  bool operator==(const Document&) const = default;
};

// word -> dense vector map in word2vec text format. Entry order follows the
// file and is the deterministic tie-break order for similarity queries.
class EmbeddingTable {
 public:
  static EmbeddingTable from_file(const std::string& path);
  static EmbeddingTable from_entries(int dim,
                                     std::vector<std::pair<std::string, std::vector<double>>> entries);

  int dim() const { return dim_; }
  std::size_t size() const { return words_.size(); }
  const std::string& word_at(std::size_t i) const { return words_[i]; }
  std::span<const double> vector_at(std::size_t i) const {
    return {vectors_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }
  // -1 when absent.
  std::int64_t find(std::string_view word) const;

 private:
  EmbeddingTable() = default;
  int dim_ = 0;
  std::vector<std::string> words_;
  std::vector<double> vectors_;  // row-major, size() * dim_
  std::unordered_map<std::string, std::int64_t> index_;
};

// Packed two-segment training example. `strategy` stores the Strategy tag.
struct TrainingInstance {
  std::vector<TokenId> input_ids;
  std::vector<TokenId> segment_ids;
  std::vector<TokenId> masked_positions;
  std::vector<TokenId> masked_label_ids;
  TokenId pair_label = 0;
  TokenId strategy = 0;
  bool operator==(const TrainingInstance&) const = default;
};

enum class InstanceFormat { kJsonl, kBinary };

InstanceFormat instance_format_from_name(std::string_view name);
std::string_view instance_format_name(InstanceFormat f);

std::vector<Document> load_corpus(const std::string& path);
// Inverse of load_corpus: one sentence per line, blank line between documents.
void write_corpus(const std::vector<Document>& docs, const std::string& path);

std::size_t write_instances(std::span<const TrainingInstance> instances, const std::string& path,
                            InstanceFormat format);
std::vector<TrainingInstance> read_instances(const std::string& path, InstanceFormat format);

// FNV-1a over the file bytes; used to invalidate synonym caches.
std::uint64_t file_hash64(const std::string& path);

}  // namespace macpipe
