#include "macpipe/synonym_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "macpipe/wordpiece.hpp"

namespace macpipe {

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw PipelineError(ErrorCode::DimMismatch, "cosine: dimension mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0)
    throw PipelineError(ErrorCode::ZeroNormVector, "cosine: zero-norm vector");
  double c = dot / (std::sqrt(nu) * std::sqrt(nv));
  return std::clamp(c, -1.0, 1.0);
}

SynonymIndex::SynonymIndex(const EmbeddingTable& table, const Vocab& vocab) : table_(&table) {
  token_lengths_.resize(table.size());
  ids_.resize(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    std::vector<TokenId> ids = tokenize_word(table.word_at(i), vocab);
    bool has_unk = std::find(ids.begin(), ids.end(), vocab.unk_id()) != ids.end();
    if (has_unk) {
      token_lengths_[i] = -1;
    } else {
      token_lengths_[i] = static_cast<int>(ids.size());
      by_length_[token_lengths_[i]].push_back(static_cast<std::int64_t>(i));
      ids_[i] = std::move(ids);
    }
  }
}

std::span<const TokenId> SynonymIndex::token_ids_at(std::size_t i) const {
  return {ids_[i].data(), ids_[i].size()};
}

SynonymResult SynonymIndex::nearest(const SynonymQuery& query) const {
  SynonymResult result;
  std::int64_t self = table_->find(query.word);
  if (self < 0) {
    result.degraded = true;
    return result;
  }
  std::span<const double> qvec = table_->vector_at(static_cast<std::size_t>(self));

  // (similarity, entry index), ordered best-first with ties by entry order.
  std::vector<std::pair<double, std::int64_t>> scored;
  for (std::size_t i = 0; i < table_->size(); ++i) {
    auto idx = static_cast<std::int64_t>(i);
    if (idx == self) continue;
    if (query.required_token_length > 0 && token_lengths_[i] != query.required_token_length)
      continue;
    double sim = cosine(qvec, table_->vector_at(i));
    if (sim < query.min_similarity) continue;
    scored.emplace_back(sim, idx);
  }
  auto better = [](const std::pair<double, std::int64_t>& a,
                   const std::pair<double, std::int64_t>& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  };
  std::size_t keep = std::min<std::size_t>(scored.size(), static_cast<std::size_t>(query.top_k));
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep),
                    scored.end(), better);
  scored.resize(keep);
  result.candidates.reserve(keep);
  for (auto& [sim, idx] : scored)
    result.candidates.emplace_back(table_->word_at(static_cast<std::size_t>(idx)), sim);
  result.degraded = result.candidates.empty();
  return result;
}

std::int64_t SynonymIndex::random_word_with_length(int length, std::string_view exclude_word,
                                                   Pcg32& rng) const {
  auto it = by_length_.find(length);
  if (it == by_length_.end() || it->second.empty()) return -1;
  const std::vector<std::int64_t>& bucket = it->second;
  std::int64_t excluded = table_->find(exclude_word);
  bool excluded_in_bucket =
      excluded >= 0 && std::binary_search(bucket.begin(), bucket.end(), excluded);
  std::size_t usable = bucket.size() - (excluded_in_bucket ? 1u : 0u);
  if (usable == 0) return -1;
  std::size_t pick = rng.bounded(static_cast<std::uint32_t>(usable));
  std::int64_t chosen = -1;
  for (std::int64_t idx : bucket) {
    if (idx == excluded) continue;
    if (pick == 0) {
      chosen = idx;
      break;
    }
    --pick;
  }
  return chosen;
}

std::optional<SynonymCache> SynonymCache::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::string line;
  if (!std::getline(in, line)) return std::nullopt;
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.contains("embedding_hash")) return std::nullopt;
  SynonymCache cache;
  cache.embedding_hash = std::strtoull(header["embedding_hash"].get<std::string>().c_str(),
                                       nullptr, 16);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    std::vector<std::pair<std::string, double>> cands;
    for (const auto& c : j.at("candidates"))
      cands.emplace_back(c.at(0).get<std::string>(), c.at(1).get<double>());
    cache.entries[j.at("word").get<std::string>()] = std::move(cands);
  }
  return cache;
}

void SynonymCache::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError(ErrorCode::IoFailure, "cannot open for write: " + path);
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(embedding_hash));
  nlohmann::ordered_json header;
  header["embedding_hash"] = hex;
  out << header.dump() << '\n';
  for (const auto& [word, cands] : entries) {
    nlohmann::ordered_json j;
    j["word"] = word;
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& [w, sim] : cands) arr.push_back(nlohmann::ordered_json::array({w, sim}));
    j["candidates"] = arr;
    out << j.dump() << '\n';
  }
  if (!out) throw PipelineError(ErrorCode::IoFailure, "write failed: " + path);
}

}  // namespace macpipe
