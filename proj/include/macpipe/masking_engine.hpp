#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "macpipe/common.hpp"
#include "macpipe/rng.hpp"
#include "macpipe/synonym_index.hpp"
#include "macpipe/wordpiece.hpp"

namespace macpipe {

// Span length distribution over 1..4 words. Default 40/30/20/10.
struct NgramSchedule {
  std::array<double, 4> weights = {0.4, 0.3, 0.2, 0.1};
};

struct TreatmentSplit {
  double similar = 0.8;
  double random = 0.1;
  double keep = 0.1;
};

struct MaskingConfig {
  double mask_budget_fraction = 0.15;
  TreatmentSplit treatment_split;  // applies to the mac strategy only
  Strategy strategy = Strategy::kMac;
  NgramSchedule schedule;
  std::uint64_t seed = 0;

  void validate() const;  // throws InvalidConfig
};

struct MaskSpan {
  std::int32_t start_word = 0;
  std::int32_t word_count = 0;
  Treatment treatment = Treatment::kKeep;
  bool operator==(const MaskSpan&) const = default;
};

// Full per-sentence masking outcome. Positions are sentence-local token
// indices; labels always hold the pre-replacement ids.
struct MaskingPlan {
  std::vector<MaskSpan> spans;
  std::vector<std::int32_t> masked_token_positions;  // sorted
  std::vector<TokenId> replacement_token_ids;        // aligned with positions
  std::vector<TokenId> label_token_ids;              // aligned with positions
  bool operator==(const MaskingPlan&) const = default;
};

// Seed for the per-sentence generator; makes masking independent of
// processing order and thread schedule.
inline std::uint64_t sentence_seed(std::uint64_t global_seed, std::uint64_t doc_index,
                                   std::uint64_t sentence_index) {
  return hash64(global_seed, doc_index, sentence_index);
}

// Probabilities over {similar, random, keep, mask_token} for a strategy.
std::array<double, 4> treatment_probabilities(const MaskingConfig& config);

// Draws non-overlapping word spans until round(budget_fraction * tokens) is
// filled or no single word fits the remainder. Lengths follow the schedule,
// renormalized over lengths the sentence can host; wwm_mask forces unigrams.
// Returned spans are sorted by start word and carry no treatment yet.
std::vector<MaskSpan> select_spans(const TokenizedSentence& sentence, const MaskingConfig& config,
                                   Pcg32& rng);

// Draws one treatment per span from the strategy's split.
void assign_treatments(std::vector<MaskSpan>& spans, const MaskingConfig& config, Pcg32& rng);

// Materializes replacements and labels. Similar-word replacement degrades
// per word: equal-length synonym, then equal-length random table word, then
// per-token random non-special ids. `index` may be null (full degradation).
MaskingPlan apply_plan(const TokenizedSentence& sentence, const std::vector<MaskSpan>& spans,
                       const SynonymIndex* index, const Vocab& vocab, Pcg32& rng);

// select + assign + apply with the per-sentence seeded generator.
MaskingPlan mask_sentence(const TokenizedSentence& sentence, const MaskingConfig& config,
                          const SynonymIndex* index, const Vocab& vocab, std::uint64_t doc_index,
                          std::uint64_t sentence_index);

}  // namespace macpipe
