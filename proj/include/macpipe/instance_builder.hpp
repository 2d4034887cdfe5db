#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "macpipe/corpus_io.hpp"
#include "macpipe/instance_stats.hpp"
#include "macpipe/masking_engine.hpp"

namespace macpipe {

struct PairTaskConfig {
  PairTask task = PairTask::kSop;
  double negative_fraction = 0.5;
  std::int32_t max_seq_len = 512;

  void validate() const;  // throws InvalidConfig
};

struct BuildConfig {
  PairTaskConfig pair;
  MaskingConfig masking;
};

// A sentence plus where it came from; provenance drives per-sentence seeding.
struct SentenceRef {
  const Sentence* sentence = nullptr;
  std::uint64_t doc_index = 0;
  std::uint64_t sentence_index = 0;
};

struct PairSample {
  std::vector<SentenceRef> seg_a;
  std::vector<SentenceRef> seg_b;
  std::int32_t pair_label = 0;  // 0 = correct order / true next, 1 = negative
};

// Splits a document at `split_point` into two sentence runs and applies the
// pair task. sop negatives swap the runs; nsp negatives draw the second run
// from a different document. Throws DocumentTooShort below 2 sentences.
PairSample make_pair(const Document& doc, std::size_t split_point, const PairTaskConfig& config,
                     Pcg32& rng, const std::vector<Document>& corpus);

// Tokenizes, truncates whole word groups off the longer segment until the
// content fits, masks each sentence with its seeded generator, then packs
// [CLS] A [SEP] (B [SEP]) with PAD fill. Throws EmptyAfterTruncation when a
// required segment ends up empty.
TrainingInstance build_instance(const std::vector<SentenceRef>& seg_a,
                                const std::vector<SentenceRef>& seg_b, const BuildConfig& config,
                                const Vocab& vocab, const SynonymIndex* index,
                                EngineStats* stats = nullptr);

// Pure per-document step shared by the streaming and parallel paths.
// Documents too short for the pair task (or emptied by truncation) yield no
// instances.
std::vector<TrainingInstance> build_document_instances(const std::vector<Document>& corpus,
                                                       std::size_t doc_index,
                                                       const BuildConfig& config,
                                                       const Vocab& vocab,
                                                       const SynonymIndex* index,
                                                       EngineStats* stats = nullptr);

using InstanceSink = std::function<void(std::size_t doc_index, TrainingInstance&& instance)>;

// Visits every document once; returns the number of emitted instances.
std::size_t stream_instances(const std::vector<Document>& corpus, const BuildConfig& config,
                             const Vocab& vocab, const SynonymIndex* index,
                             const InstanceSink& sink, EngineStats* stats = nullptr);

// Checks every TrainingInstance invariant (layout, segment ids, masked
// position alignment); throws ShapeMismatch with a description on violation.
void validate_instance(const TrainingInstance& instance, const Vocab& vocab);

}  // namespace macpipe
