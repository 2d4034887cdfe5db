#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "macpipe/instance_builder.hpp"
#include "macpipe/wordpiece.hpp"

using namespace macpipe;

namespace {

Document make_doc(std::size_t index, std::vector<std::vector<std::string>> sentences) {
  Document doc;
  doc.source_index = index;
  for (auto& words : sentences) doc.sentences.push_back(Sentence{std::move(words)});
  return doc;
}

std::vector<std::string> segment_words(const std::vector<SentenceRef>& refs) {
  std::vector<std::string> out;
  for (const SentenceRef& ref : refs)
    out.insert(out.end(), ref.sentence->words.begin(), ref.sentence->words.end());
  return out;
}

}  // namespace

TEST_CASE("sop pairs keep or swap the sentence runs") {
  std::vector<Document> corpus = {make_doc(0, {{"a", "b"}, {"c"}})};
  PairTaskConfig config;
  config.task = PairTask::kSop;

  config.negative_fraction = 0.0;
  Pcg32 rng_pos(1);
  PairSample pos = make_pair(corpus[0], 1, config, rng_pos, corpus);
  CHECK(pos.pair_label == 0);
  CHECK(segment_words(pos.seg_a) == std::vector<std::string>{"a", "b"});
  CHECK(segment_words(pos.seg_b) == std::vector<std::string>{"c"});

  config.negative_fraction = 1.0;
  Pcg32 rng_neg(1);
  PairSample neg = make_pair(corpus[0], 1, config, rng_neg, corpus);
  CHECK(neg.pair_label == 1);
  CHECK(segment_words(neg.seg_a) == std::vector<std::string>{"c"});
  CHECK(segment_words(neg.seg_b) == std::vector<std::string>{"a", "b"});
}

TEST_CASE("nsp negatives draw the second segment from another document") {
  std::vector<Document> corpus = {make_doc(0, {{"a"}, {"b"}}), make_doc(1, {{"x"}, {"y"}})};
  PairTaskConfig config;
  config.task = PairTask::kNsp;
  config.negative_fraction = 1.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Pcg32 rng(seed);
    PairSample neg = make_pair(corpus[0], 1, config, rng, corpus);
    CHECK(neg.pair_label == 1);
    for (const SentenceRef& ref : neg.seg_b) CHECK(ref.doc_index == 1);
  }
  config.negative_fraction = 0.0;
  Pcg32 rng(9);
  PairSample pos = make_pair(corpus[0], 1, config, rng, corpus);
  CHECK(pos.pair_label == 0);
  CHECK(segment_words(pos.seg_b) == std::vector<std::string>{"b"});
}

TEST_CASE("documents with a single sentence cannot form pairs") {
  std::vector<Document> corpus = {make_doc(0, {{"a", "b", "c"}})};
  PairTaskConfig config;
  Pcg32 rng(1);
  CHECK_THROWS_AS(make_pair(corpus[0], 1, config, rng, corpus), PipelineError);
}

TEST_CASE("packed layout matches the fixed arithmetic") {
  Vocab vocab = testutil::make_letters_vocab();
  std::vector<Document> corpus = {make_doc(0, {{"a", "b", "c"}, {"d", "e", "f", "g"}})};
  BuildConfig config;
  config.pair.task = PairTask::kSop;
  config.pair.max_seq_len = 16;
  config.pair.negative_fraction = 0.0;
  config.masking.seed = 5;

  Pcg32 rng(1);
  PairSample pair = make_pair(corpus[0], 1, config.pair, rng, corpus);
  TrainingInstance inst = build_instance(pair.seg_a, pair.seg_b, config, vocab, nullptr);

  REQUIRE(inst.input_ids.size() == 16);
  CHECK(inst.input_ids[0] == vocab.cls_id());
  CHECK(inst.input_ids[4] == vocab.sep_id());
  CHECK(inst.input_ids[9] == vocab.sep_id());
  for (std::size_t i = 10; i < 16; ++i) CHECK(inst.input_ids[i] == vocab.pad_id());

  std::vector<TokenId> expected_segments = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
  CHECK(inst.segment_ids == expected_segments);
  validate_instance(inst, vocab);
}

TEST_CASE("truncation trims whole groups off the longer segment") {
  Vocab vocab = testutil::make_letters_vocab();
  std::vector<std::string> many_a(300, "a"), many_b(300, "b");
  std::vector<Document> corpus = {make_doc(0, {many_a, many_b})};
  BuildConfig config;
  config.pair.task = PairTask::kSop;
  config.pair.max_seq_len = 512;
  config.pair.negative_fraction = 0.0;

  Pcg32 rng(1);
  PairSample pair = make_pair(corpus[0], 1, config.pair, rng, corpus);
  TrainingInstance inst = build_instance(pair.seg_a, pair.seg_b, config, vocab, nullptr);

  std::vector<std::size_t> seps;
  for (std::size_t i = 0; i < inst.input_ids.size(); ++i) {
    if (inst.input_ids[i] == vocab.sep_id()) seps.push_back(i);
  }
  REQUIRE(seps.size() == 2);
  std::size_t len_a = seps[0] - 1;
  std::size_t len_b = seps[1] - seps[0] - 1;
  CHECK(len_a + len_b == 509);
  CHECK((len_a > len_b ? len_a - len_b : len_b - len_a) <= 1);
  validate_instance(inst, vocab);
}

TEST_CASE("truncation that empties a segment is an error") {
  Vocab vocab = testutil::make_letters_vocab();
  // One word of ten tokens cannot fit a content budget of four.
  std::vector<Document> corpus = {make_doc(0, {{"qqqqqqqqqq"}})};
  BuildConfig config;
  config.pair.task = PairTask::kNone;
  config.pair.max_seq_len = 6;
  std::vector<SentenceRef> seg = {{&corpus[0].sentences[0], 0, 0}};
  CHECK_THROWS_AS(build_instance(seg, {}, config, vocab, nullptr), PipelineError);
  CHECK(build_document_instances(corpus, 0, config, vocab, nullptr).empty());
}

TEST_CASE("instance invariants hold over a thousand random builds") {
  Vocab vocab = testutil::make_letters_vocab();
  Pcg32 gen(1234);
  std::vector<Document> corpus;
  for (std::size_t d = 0; d < 1000; ++d) {
    Document doc;
    doc.source_index = d;
    std::size_t n_sents = 2 + gen.bounded(3);
    for (std::size_t s = 0; s < n_sents; ++s) {
      Sentence sent;
      std::size_t n_words = 3 + gen.bounded(20);
      for (std::size_t w = 0; w < n_words; ++w) {
        std::string word;
        std::size_t len = 1 + gen.bounded(4);
        for (std::size_t k = 0; k < len; ++k)
          word.push_back(static_cast<char>('a' + gen.bounded(26)));
        sent.words.push_back(word);
      }
      doc.sentences.push_back(std::move(sent));
    }
    corpus.push_back(std::move(doc));
  }

  const Strategy strategies[] = {Strategy::kMac, Strategy::kRandomReplace, Strategy::kPartialMask,
                                 Strategy::kAllMask, Strategy::kWwmMask};
  const PairTask tasks[] = {PairTask::kSop, PairTask::kNsp, PairTask::kNone};
  std::size_t built = 0;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    BuildConfig config;
    config.masking.seed = 99;
    config.masking.strategy = strategies[d % 5];
    config.pair.task = tasks[d % 3];
    config.pair.max_seq_len = 96;
    for (const TrainingInstance& inst :
         build_document_instances(corpus, d, config, vocab, nullptr)) {
      validate_instance(inst, vocab);
      CHECK(inst.strategy == static_cast<TokenId>(config.masking.strategy));
      ++built;
    }
  }
  CHECK(built >= 1000);
}

TEST_CASE("pair labels balance at the configured negative fraction") {
  std::vector<Document> corpus;
  for (std::size_t d = 0; d < 12000; ++d)
    corpus.push_back(make_doc(d, {{"a", "b"}, {"c", "d"}}));
  PairTaskConfig config;
  config.task = PairTask::kSop;
  config.negative_fraction = 0.5;
  std::size_t negatives = 0;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    Pcg32 rng(hash64(7, d, ~0ull));
    std::size_t split = 1 + rng.bounded(1);
    PairSample pair = make_pair(corpus[d], split, config, rng, corpus);
    negatives += pair.pair_label == 1 ? 1 : 0;
  }
  double frac = static_cast<double>(negatives) / static_cast<double>(corpus.size());
  CHECK(frac > 0.48);
  CHECK(frac < 0.52);
}

TEST_CASE("sop negatives are exact segment swaps of the positive build") {
  Vocab vocab = testutil::make_letters_vocab();
  std::vector<Document> corpus = {
      make_doc(0, {{"ab", "cd"}, {"ef"}, {"gh", "ij", "kl"}}),
  };
  PairTaskConfig pos_cfg;
  pos_cfg.task = PairTask::kSop;
  pos_cfg.negative_fraction = 0.0;
  PairTaskConfig neg_cfg = pos_cfg;
  neg_cfg.negative_fraction = 1.0;
  for (std::size_t split = 1; split < 3; ++split) {
    Pcg32 rng_a(3), rng_b(3);
    PairSample pos = make_pair(corpus[0], split, pos_cfg, rng_a, corpus);
    PairSample neg = make_pair(corpus[0], split, neg_cfg, rng_b, corpus);
    CHECK(segment_words(pos.seg_a) == segment_words(neg.seg_b));
    CHECK(segment_words(pos.seg_b) == segment_words(neg.seg_a));

    auto tokens_of = [&](const std::vector<SentenceRef>& a, const std::vector<SentenceRef>& b) {
      std::vector<TokenId> out;
      for (const std::vector<SentenceRef>* seg : {&a, &b}) {
        for (const SentenceRef& ref : *seg) {
          TokenizedSentence ts = tokenize_sentence(*ref.sentence, vocab);
          out.insert(out.end(), ts.tokens.begin(), ts.tokens.end());
        }
      }
      return out;
    };
    CHECK(tokens_of(pos.seg_a, pos.seg_b) == tokens_of(neg.seg_b, neg.seg_a));
  }
}

TEST_CASE("stream visits every document once and is deterministic") {
  Vocab vocab = testutil::make_letters_vocab();
  std::vector<Document> corpus;
  for (std::size_t d = 0; d < 50; ++d)
    corpus.push_back(make_doc(d, {{"aa", "bb", "cc"}, {"dd", "ee"}}));
  BuildConfig config;
  config.pair.max_seq_len = 64;
  config.masking.seed = 21;

  std::vector<std::pair<std::size_t, TrainingInstance>> first, second;
  std::size_t n1 = stream_instances(corpus, config, vocab, nullptr,
                                    [&](std::size_t d, TrainingInstance&& inst) {
                                      first.emplace_back(d, std::move(inst));
                                    });
  std::size_t n2 = stream_instances(corpus, config, vocab, nullptr,
                                    [&](std::size_t d, TrainingInstance&& inst) {
                                      second.emplace_back(d, std::move(inst));
                                    });
  CHECK(n1 == 50);
  CHECK(n1 == n2);
  CHECK(first == second);
}

TEST_CASE("empty corpus and single-sentence documents under task none") {
  Vocab vocab = testutil::make_letters_vocab();
  BuildConfig config;
  config.pair.task = PairTask::kNone;
  config.pair.max_seq_len = 32;
  CHECK(stream_instances({}, config, vocab, nullptr, [](std::size_t, TrainingInstance&&) {}) == 0);

  std::vector<Document> corpus;
  for (std::size_t d = 0; d < 10; ++d) corpus.push_back(make_doc(d, {{"ab", "cd", "ef"}}));
  std::size_t count = stream_instances(corpus, config, vocab, nullptr,
                                       [&](std::size_t, TrainingInstance&& inst) {
                                         CHECK(inst.input_ids[0] == vocab.cls_id());
                                         validate_instance(inst, vocab);
                                       });
  CHECK(count == 10);
}

TEST_CASE("engine stats accumulate spans during builds") {
  Vocab vocab = testutil::make_letters_vocab();
  std::vector<Document> corpus;
  for (std::size_t d = 0; d < 40; ++d) {
    std::vector<std::string> words(40, "a");
    corpus.push_back(make_doc(d, {words, words}));
  }
  BuildConfig config;
  config.pair.max_seq_len = 128;
  EngineStats stats;
  stream_instances(corpus, config, vocab, nullptr, [](std::size_t, TrainingInstance&&) {}, &stats);
  CHECK(stats.span_count > 0);
  std::size_t treatment_total = 0;
  for (std::size_t c : stats.treatment_counts) treatment_total += c;
  CHECK(treatment_total == stats.span_count);
  std::size_t hist_total = 0;
  for (std::size_t c : stats.ngram_histogram) hist_total += c;
  CHECK(hist_total == stats.span_count);
}

TEST_CASE("pair config rejects bad values") {
  PairTaskConfig config;
  config.negative_fraction = 1.5;
  CHECK_THROWS_AS(config.validate(), PipelineError);
  config = PairTaskConfig{};
  config.max_seq_len = 3;
  CHECK_THROWS_AS(config.validate(), PipelineError);
  CHECK_NOTHROW(PairTaskConfig{}.validate());
}
