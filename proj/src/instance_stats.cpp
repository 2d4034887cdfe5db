#include "macpipe/instance_stats.hpp"

#include <algorithm>

namespace macpipe {

InstanceStats compute_instance_stats(std::span<const TrainingInstance> instances,
                                     const Vocab& vocab) {
  InstanceStats stats;
  stats.instance_count = instances.size();
  for (const TrainingInstance& inst : instances) {
    std::vector<std::size_t> seps;
    std::size_t content_end = 0;
    for (std::size_t i = 0; i < inst.input_ids.size(); ++i) {
      if (inst.input_ids[i] == vocab.sep_id()) {
        seps.push_back(i);
        content_end = i + 1;
      }
    }
    for (std::size_t i = 1; i < content_end; ++i) {
      if (std::find(seps.begin(), seps.end(), i) == seps.end()) ++stats.content_token_count;
    }
    for (std::size_t k = 0; k < inst.masked_positions.size(); ++k) {
      ++stats.masked_position_count;
      auto pos = static_cast<std::size_t>(inst.masked_positions[k]);
      TokenId current = inst.input_ids[pos];
      TokenId original = inst.masked_label_ids[k];
      if (current == vocab.mask_id()) ++stats.mask_token_count;
      if (current == original)
        ++stats.kept_count;
      else
        ++stats.changed_count;
    }
    if (inst.pair_label == 1)
      ++stats.pair_negative;
    else
      ++stats.pair_positive;
  }
  return stats;
}

void EngineStats::add(const MaskingPlan& plan) {
  for (const MaskSpan& span : plan.spans) {
    ++span_count;
    ++treatment_counts[static_cast<std::size_t>(span.treatment)];
    std::size_t len = std::min<std::size_t>(4, static_cast<std::size_t>(span.word_count));
    if (len >= 1) ++ngram_histogram[len - 1];
  }
}

void EngineStats::merge(const EngineStats& other) {
  span_count += other.span_count;
  for (std::size_t i = 0; i < 4; ++i) {
    treatment_counts[i] += other.treatment_counts[i];
    ngram_histogram[i] += other.ngram_histogram[i];
  }
}

}  // namespace macpipe
