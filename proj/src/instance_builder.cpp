#include "macpipe/instance_builder.hpp"

#include <algorithm>
#include <string>

#include "macpipe/wordpiece.hpp"

namespace macpipe {

namespace {

// Sentinel sentence index reserved for per-document draws (split point,
// negative sampling); real sentence indices never reach it.
constexpr std::uint64_t kDocDrawTag = ~0ull;

struct TokenizedSeg {
  std::vector<TokenizedSentence> sentences;
  std::vector<std::uint64_t> doc_indices;
  std::vector<std::uint64_t> sentence_indices;

  std::size_t total_tokens() const {
    std::size_t n = 0;
    for (const TokenizedSentence& s : sentences) n += s.token_count();
    return n;
  }
  bool empty_tokens() const { return total_tokens() == 0; }

  // Drops the last word group of the last sentence; removes the sentence
  // when it empties.
  void pop_tail_group() {
    while (!sentences.empty() && sentences.back().word_groups.empty()) drop_last();
    if (sentences.empty()) return;
    TokenizedSentence& last = sentences.back();
    const WordGroup& g = last.word_groups.back();
    last.tokens.resize(static_cast<std::size_t>(g.start));
    last.word_groups.pop_back();
    last.words.pop_back();
    if (last.word_groups.empty()) drop_last();
  }

 private:
  void drop_last() {
    sentences.pop_back();
    doc_indices.pop_back();
    sentence_indices.pop_back();
  }
};

TokenizedSeg tokenize_segment(const std::vector<SentenceRef>& refs, const Vocab& vocab) {
  TokenizedSeg seg;
  seg.sentences.reserve(refs.size());
  for (const SentenceRef& ref : refs) {
    seg.sentences.push_back(tokenize_sentence(*ref.sentence, vocab));
    seg.doc_indices.push_back(ref.doc_index);
    seg.sentence_indices.push_back(ref.sentence_index);
  }
  return seg;
}

std::vector<SentenceRef> make_refs(const Document& doc, std::size_t from, std::size_t to) {
  std::vector<SentenceRef> refs;
  refs.reserve(to - from);
  for (std::size_t i = from; i < to; ++i)
    refs.push_back({&doc.sentences[i], doc.source_index, i});
  return refs;
}

}  // namespace

void PairTaskConfig::validate() const {
  if (!(negative_fraction >= 0.0 && negative_fraction <= 1.0))
    throw PipelineError(ErrorCode::InvalidConfig, "negative_fraction must be in [0, 1]");
  std::int32_t overhead = task == PairTask::kNone ? 2 : 3;
  if (max_seq_len < overhead + 2)
    throw PipelineError(ErrorCode::InvalidConfig, "max_seq_len too small for the task layout");
}

PairSample make_pair(const Document& doc, std::size_t split_point, const PairTaskConfig& config,
                     Pcg32& rng, const std::vector<Document>& corpus) {
  const std::size_t n = doc.sentences.size();
  if (n < 2)
    throw PipelineError(ErrorCode::DocumentTooShort,
                        "document " + std::to_string(doc.source_index) + " has < 2 sentences");
  if (split_point < 1 || split_point >= n)
    throw PipelineError(ErrorCode::InvalidConfig, "split_point out of range");

  PairSample out;
  bool negative = rng.next_double() < config.negative_fraction;
  std::vector<SentenceRef> head = make_refs(doc, 0, split_point);
  std::vector<SentenceRef> tail = make_refs(doc, split_point, n);

  if (config.task == PairTask::kSop) {
    if (negative) {
      out.seg_a = std::move(tail);
      out.seg_b = std::move(head);
      out.pair_label = 1;
    } else {
      out.seg_a = std::move(head);
      out.seg_b = std::move(tail);
      out.pair_label = 0;
    }
    return out;
  }
  if (config.task == PairTask::kNsp) {
    out.seg_a = std::move(head);
    if (negative) {
      if (corpus.size() < 2)
        throw PipelineError(ErrorCode::DocumentTooShort, "nsp negatives need >= 2 documents");
      std::size_t other = rng.bounded(static_cast<std::uint32_t>(corpus.size() - 1));
      if (other >= doc.source_index) ++other;
      const Document& d2 = corpus[other];
      std::size_t start = rng.bounded(static_cast<std::uint32_t>(d2.sentences.size()));
      out.seg_b = make_refs(d2, start, d2.sentences.size());
      out.pair_label = 1;
    } else {
      out.seg_b = std::move(tail);
      out.pair_label = 0;
    }
    return out;
  }
  throw PipelineError(ErrorCode::InvalidConfig, "make_pair requires a pair task");
}

TrainingInstance build_instance(const std::vector<SentenceRef>& seg_a,
                                const std::vector<SentenceRef>& seg_b, const BuildConfig& config,
                                const Vocab& vocab, const SynonymIndex* index,
                                EngineStats* stats) {
  config.pair.validate();
  config.masking.validate();
  const bool paired = config.pair.task != PairTask::kNone;
  if (!paired && !seg_b.empty())
    throw PipelineError(ErrorCode::InvalidConfig, "task=none takes a single segment");

  TokenizedSeg a = tokenize_segment(seg_a, vocab);
  TokenizedSeg b = tokenize_segment(seg_b, vocab);

  const std::size_t content_budget =
      static_cast<std::size_t>(config.pair.max_seq_len) - (paired ? 3 : 2);

  bool tie_trims_b = false;
  while (a.total_tokens() + b.total_tokens() > content_budget) {
    std::size_t ta = a.total_tokens(), tb = b.total_tokens();
    TokenizedSeg* target;
    if (ta > tb) {
      target = &a;
    } else if (tb > ta) {
      target = &b;
    } else {
      target = tie_trims_b ? &b : &a;
      tie_trims_b = !tie_trims_b;
    }
    target->pop_tail_group();
  }
  if (a.empty_tokens() || (paired && b.empty_tokens()))
    throw PipelineError(ErrorCode::EmptyAfterTruncation, "segment empty after truncation");

  TrainingInstance inst;
  inst.strategy = static_cast<TokenId>(config.masking.strategy);
  inst.input_ids.reserve(static_cast<std::size_t>(config.pair.max_seq_len));
  inst.input_ids.push_back(vocab.cls_id());

  auto emit_segment = [&](TokenizedSeg& seg) {
    for (std::size_t s = 0; s < seg.sentences.size(); ++s) {
      TokenizedSentence& ts = seg.sentences[s];
      MaskingPlan plan = mask_sentence(ts, config.masking, index, vocab, seg.doc_indices[s],
                                       seg.sentence_indices[s]);
      if (stats != nullptr) stats->add(plan);
      const auto offset = static_cast<std::int32_t>(inst.input_ids.size());
      std::vector<TokenId> ids = ts.tokens;
      for (std::size_t k = 0; k < plan.masked_token_positions.size(); ++k) {
        std::int32_t pos = plan.masked_token_positions[k];
        ids[static_cast<std::size_t>(pos)] = plan.replacement_token_ids[k];
        inst.masked_positions.push_back(offset + pos);
        inst.masked_label_ids.push_back(plan.label_token_ids[k]);
      }
      inst.input_ids.insert(inst.input_ids.end(), ids.begin(), ids.end());
    }
  };

  emit_segment(a);
  inst.input_ids.push_back(vocab.sep_id());
  const std::size_t first_sep = inst.input_ids.size() - 1;
  if (paired) {
    emit_segment(b);
    inst.input_ids.push_back(vocab.sep_id());
  }
  const std::size_t content_end = inst.input_ids.size();
  inst.input_ids.resize(static_cast<std::size_t>(config.pair.max_seq_len), vocab.pad_id());

  inst.segment_ids.assign(inst.input_ids.size(), 0);
  for (std::size_t i = first_sep + 1; i < content_end; ++i) inst.segment_ids[i] = 1;

  return inst;
}

std::vector<TrainingInstance> build_document_instances(const std::vector<Document>& corpus,
                                                       std::size_t doc_index,
                                                       const BuildConfig& config,
                                                       const Vocab& vocab,
                                                       const SynonymIndex* index,
                                                       EngineStats* stats) {
  const Document& doc = corpus[doc_index];
  std::vector<TrainingInstance> out;
  EngineStats local;
  try {
    if (config.pair.task == PairTask::kNone) {
      std::vector<SentenceRef> all = make_refs(doc, 0, doc.sentences.size());
      out.push_back(build_instance(all, {}, config, vocab, index, &local));
    } else {
      if (doc.sentences.size() < 2) return out;
      Pcg32 rng(hash64(config.masking.seed, doc.source_index, kDocDrawTag));
      std::size_t split = 1 + rng.bounded(static_cast<std::uint32_t>(doc.sentences.size() - 1));
      PairSample pair = make_pair(doc, split, config.pair, rng, corpus);
      TrainingInstance inst = build_instance(pair.seg_a, pair.seg_b, config, vocab, index, &local);
      inst.pair_label = pair.pair_label;
      out.push_back(std::move(inst));
    }
  } catch (const PipelineError& e) {
    if (e.code() != ErrorCode::EmptyAfterTruncation && e.code() != ErrorCode::DocumentTooShort)
      throw;
    return {};
  }
  if (stats != nullptr) stats->merge(local);
  return out;
}

std::size_t stream_instances(const std::vector<Document>& corpus, const BuildConfig& config,
                             const Vocab& vocab, const SynonymIndex* index,
                             const InstanceSink& sink, EngineStats* stats) {
  std::size_t count = 0;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    for (TrainingInstance& inst :
         build_document_instances(corpus, d, config, vocab, index, stats)) {
      sink(d, std::move(inst));
      ++count;
    }
  }
  return count;
}

void validate_instance(const TrainingInstance& inst, const Vocab& vocab) {
  auto fail = [](const std::string& what) {
    throw PipelineError(ErrorCode::ShapeMismatch, "instance invariant violated: " + what);
  };
  if (inst.input_ids.empty() || inst.input_ids.front() != vocab.cls_id()) fail("missing CLS");
  if (inst.segment_ids.size() != inst.input_ids.size()) fail("segment_ids length");
  if (inst.masked_positions.size() != inst.masked_label_ids.size()) fail("label alignment");

  std::vector<std::size_t> seps;
  for (std::size_t i = 0; i < inst.input_ids.size(); ++i) {
    if (inst.input_ids[i] == vocab.sep_id()) seps.push_back(i);
  }
  if (seps.size() != 1 && seps.size() != 2) fail("SEP count");

  std::size_t content_end = seps.back() + 1;
  for (std::size_t i = 0; i < inst.input_ids.size(); ++i) {
    bool in_b = i > seps.front() && i < content_end && seps.size() == 2;
    TokenId expect = in_b ? 1 : 0;
    if (inst.segment_ids[i] != expect) fail("segment id pattern");
    if (i >= content_end && inst.input_ids[i] != vocab.pad_id()) fail("non-PAD after content");
    if (i < content_end && inst.input_ids[i] == vocab.pad_id()) fail("PAD inside content");
  }

  std::int32_t prev = -1;
  for (std::size_t k = 0; k < inst.masked_positions.size(); ++k) {
    std::int32_t pos = inst.masked_positions[k];
    if (pos <= prev) fail("masked_positions not strictly increasing");
    prev = pos;
    if (pos < 0 || static_cast<std::size_t>(pos) >= inst.input_ids.size()) fail("position range");
    auto upos = static_cast<std::size_t>(pos);
    if (upos == 0 || upos >= content_end) fail("masked position on special/PAD");
    if (std::find(seps.begin(), seps.end(), upos) != seps.end()) fail("masked position on SEP");
  }
  if (inst.pair_label != 0 && inst.pair_label != 1) fail("pair_label range");
}

}  // namespace macpipe
