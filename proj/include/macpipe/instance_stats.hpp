#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "macpipe/corpus_io.hpp"
#include "macpipe/masking_engine.hpp"

namespace macpipe {

// Aggregates recomputable from an instance file alone.
struct InstanceStats {
  std::size_t instance_count = 0;
  std::size_t content_token_count = 0;  // positions excluding CLS/SEP/PAD
  std::size_t masked_position_count = 0;
  std::size_t mask_token_count = 0;  // masked positions holding [MASK]
  std::size_t changed_count = 0;     // masked positions where input != label
  std::size_t kept_count = 0;
  std::size_t pair_positive = 0;
  std::size_t pair_negative = 0;

  double realized_mask_fraction() const {
    return content_token_count == 0
               ? 0.0
               : static_cast<double>(masked_position_count) /
                     static_cast<double>(content_token_count);
  }
  double fraction_of_masked(std::size_t count) const {
    return masked_position_count == 0
               ? 0.0
               : static_cast<double>(count) / static_cast<double>(masked_position_count);
  }
  double negative_fraction() const {
    std::size_t total = pair_positive + pair_negative;
    return total == 0 ? 0.0 : static_cast<double>(pair_negative) / static_cast<double>(total);
  }
};

InstanceStats compute_instance_stats(std::span<const TrainingInstance> instances,
                                     const Vocab& vocab);

// Span-level aggregates only the masking engine can see (treatments and
// span lengths are not recoverable from packed instances).
struct EngineStats {
  std::size_t span_count = 0;
  std::array<std::size_t, 4> treatment_counts{};  // similar, random, keep, mask_token
  std::array<std::size_t, 4> ngram_histogram{};   // word lengths 1..4

  void add(const MaskingPlan& plan);
  void merge(const EngineStats& other);
};

}  // namespace macpipe
