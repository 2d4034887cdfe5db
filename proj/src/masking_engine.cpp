#include "macpipe/masking_engine.hpp"

#include <algorithm>
#include <cmath>

namespace macpipe {

namespace {

constexpr int kMaxPlacementFailures = 30;

void check_unit_interval(double x, const char* what) {
  if (!(x >= 0.0))
    throw PipelineError(ErrorCode::InvalidConfig, std::string(what) + " must be non-negative");
}

}  // namespace

void MaskingConfig::validate() const {
  if (!(mask_budget_fraction > 0.0 && mask_budget_fraction < 1.0))
    throw PipelineError(ErrorCode::InvalidConfig, "mask_budget_fraction must be in (0, 1)");
  double ssum = 0.0;
  for (double w : schedule.weights) {
    check_unit_interval(w, "schedule weight");
    ssum += w;
  }
  if (std::abs(ssum - 1.0) > 1e-9)
    throw PipelineError(ErrorCode::InvalidConfig, "schedule weights must sum to 1");
  check_unit_interval(treatment_split.similar, "treatment split");
  check_unit_interval(treatment_split.random, "treatment split");
  check_unit_interval(treatment_split.keep, "treatment split");
  double tsum = treatment_split.similar + treatment_split.random + treatment_split.keep;
  if (std::abs(tsum - 1.0) > 1e-9)
    throw PipelineError(ErrorCode::InvalidConfig, "treatment split must sum to 1");
}

std::array<double, 4> treatment_probabilities(const MaskingConfig& config) {
  switch (config.strategy) {
    case Strategy::kMac:
      return {config.treatment_split.similar, config.treatment_split.random,
              config.treatment_split.keep, 0.0};
    case Strategy::kRandomReplace:
      return {0.0, 0.9, 0.1, 0.0};
    case Strategy::kPartialMask:
    case Strategy::kWwmMask:
      return {0.0, 0.1, 0.1, 0.8};
    case Strategy::kAllMask:
      return {0.0, 0.0, 0.1, 0.9};
  }
  throw PipelineError(ErrorCode::InvalidConfig, "bad strategy");
}

std::vector<MaskSpan> select_spans(const TokenizedSentence& sentence, const MaskingConfig& config,
                                   Pcg32& rng) {
  const std::size_t n_words = sentence.word_count();
  if (n_words == 0) return {};
  const auto token_count = static_cast<double>(sentence.token_count());
  const auto budget = static_cast<std::int64_t>(std::llround(config.mask_budget_fraction * token_count));
  if (budget <= 0) return {};

  std::array<double, 4> weights = config.schedule.weights;
  if (config.strategy == Strategy::kWwmMask) weights = {1.0, 0.0, 0.0, 0.0};

  // Renormalize over lengths the sentence can host at all.
  std::size_t max_len = std::min<std::size_t>(4, n_words);
  double wsum = 0.0;
  for (std::size_t l = 0; l < max_len; ++l) wsum += weights[l];
  if (wsum <= 0.0) {
    weights = {1.0, 0.0, 0.0, 0.0};
    wsum = 1.0;
  }

  auto group_tokens = [&](std::size_t w) {
    return static_cast<std::int64_t>(sentence.word_groups[w].length);
  };
  auto span_tokens = [&](std::size_t start, std::size_t len) {
    std::int64_t t = 0;
    for (std::size_t w = start; w < start + len; ++w) t += group_tokens(w);
    return t;
  };

  std::vector<bool> occupied(n_words, false);
  std::vector<MaskSpan> spans;
  std::int64_t covered = 0;
  int failures = 0;

  std::vector<std::size_t> candidates;
  while (covered < budget && failures < kMaxPlacementFailures) {
    double u = rng.next_double() * wsum;
    std::size_t len = max_len;
    double acc = 0.0;
    for (std::size_t l = 0; l < max_len; ++l) {
      acc += weights[l];
      if (u < acc) {
        len = l + 1;
        break;
      }
    }
    candidates.clear();
    for (std::size_t s = 0; s + len <= n_words; ++s) {
      bool free = true;
      for (std::size_t w = s; w < s + len; ++w) {
        if (occupied[w]) {
          free = false;
          break;
        }
      }
      if (free && span_tokens(s, len) <= budget - covered) candidates.push_back(s);
    }
    if (candidates.empty()) {
      ++failures;
      continue;
    }
    std::size_t start = candidates[rng.bounded(static_cast<std::uint32_t>(candidates.size()))];
    for (std::size_t w = start; w < start + len; ++w) occupied[w] = true;
    covered += span_tokens(start, len);
    spans.push_back({static_cast<std::int32_t>(start), static_cast<std::int32_t>(len),
                     Treatment::kKeep});
    failures = 0;
  }

  // Saturate with unigrams so no length-1 span still fits the remainder.
  if (covered < budget) {
    for (std::size_t w = 0; w < n_words && covered < budget; ++w) {
      if (occupied[w] || group_tokens(w) > budget - covered) continue;
      occupied[w] = true;
      covered += group_tokens(w);
      spans.push_back({static_cast<std::int32_t>(w), 1, Treatment::kKeep});
    }
  }

  std::sort(spans.begin(), spans.end(),
            [](const MaskSpan& a, const MaskSpan& b) { return a.start_word < b.start_word; });
  return spans;
}

void assign_treatments(std::vector<MaskSpan>& spans, const MaskingConfig& config, Pcg32& rng) {
  const std::array<double, 4> probs = treatment_probabilities(config);
  const std::array<Treatment, 4> order = {Treatment::kSimilar, Treatment::kRandom,
                                          Treatment::kKeep, Treatment::kMaskToken};
  for (MaskSpan& span : spans) {
    double u = rng.next_double();
    double acc = 0.0;
    span.treatment = order.back();
    for (std::size_t k = 0; k < order.size(); ++k) {
      acc += probs[k];
      if (u < acc) {
        span.treatment = order[k];
        break;
      }
    }
  }
}

namespace {

// Equal-length synonym -> equal-length random table word -> per-token random.
std::vector<TokenId> similar_replacement(const std::string& word,
                                         std::span<const TokenId> original,
                                         const SynonymIndex* index,
                                         std::span<const TokenId> non_special, Pcg32& rng) {
  const int length = static_cast<int>(original.size());
  if (index != nullptr) {
    SynonymQuery query;
    query.word = word;
    query.required_token_length = length;
    query.top_k = 1;
    SynonymResult res = index->nearest(query);
    if (!res.degraded) {
      std::int64_t entry = index->table().find(res.candidates.front().first);
      std::span<const TokenId> ids = index->token_ids_at(static_cast<std::size_t>(entry));
      return {ids.begin(), ids.end()};
    }
    std::int64_t fallback = index->random_word_with_length(length, word, rng);
    if (fallback >= 0) {
      std::span<const TokenId> ids = index->token_ids_at(static_cast<std::size_t>(fallback));
      return {ids.begin(), ids.end()};
    }
  }
  std::vector<TokenId> out(original.size());
  for (TokenId& id : out)
    id = non_special[rng.bounded(static_cast<std::uint32_t>(non_special.size()))];
  return out;
}

}  // namespace

MaskingPlan apply_plan(const TokenizedSentence& sentence, const std::vector<MaskSpan>& spans,
                       const SynonymIndex* index, const Vocab& vocab, Pcg32& rng) {
  std::vector<TokenId> non_special;
  non_special.reserve(vocab.size());
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    if (!vocab.is_special(static_cast<TokenId>(id))) non_special.push_back(static_cast<TokenId>(id));
  }

  MaskingPlan plan;
  plan.spans = spans;
  for (const MaskSpan& span : plan.spans) {
    for (std::int32_t w = span.start_word; w < span.start_word + span.word_count; ++w) {
      const WordGroup& group = sentence.word_groups[static_cast<std::size_t>(w)];
      std::span<const TokenId> original(sentence.tokens.data() + group.start,
                                        static_cast<std::size_t>(group.length));
      std::vector<TokenId> replacement;
      switch (span.treatment) {
        case Treatment::kSimilar:
          replacement = similar_replacement(sentence.words[static_cast<std::size_t>(w)], original,
                                            index, non_special, rng);
          break;
        case Treatment::kRandom:
          replacement.resize(original.size());
          for (TokenId& id : replacement)
            id = non_special[rng.bounded(static_cast<std::uint32_t>(non_special.size()))];
          break;
        case Treatment::kKeep:
          replacement.assign(original.begin(), original.end());
          break;
        case Treatment::kMaskToken:
          replacement.assign(original.size(), vocab.mask_id());
          break;
      }
      for (std::int32_t t = 0; t < group.length; ++t) {
        plan.masked_token_positions.push_back(group.start + t);
        plan.replacement_token_ids.push_back(replacement[static_cast<std::size_t>(t)]);
        plan.label_token_ids.push_back(original[static_cast<std::size_t>(t)]);
      }
    }
  }
  return plan;
}

MaskingPlan mask_sentence(const TokenizedSentence& sentence, const MaskingConfig& config,
                          const SynonymIndex* index, const Vocab& vocab, std::uint64_t doc_index,
                          std::uint64_t sentence_index) {
  Pcg32 rng(sentence_seed(config.seed, doc_index, sentence_index));
  std::vector<MaskSpan> spans = select_spans(sentence, config, rng);
  assign_treatments(spans, config, rng);
  return apply_plan(sentence, spans, index, vocab, rng);
}

}  // namespace macpipe
