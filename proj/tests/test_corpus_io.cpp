#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>
#include <vector>

#include "helpers.hpp"
#include "macpipe/corpus_io.hpp"
#include "macpipe/rng.hpp"

using namespace macpipe;
using testutil::TempDir;
using testutil::write_file;

TEST_CASE("vocab line order defines ids") {
  TempDir dir;
  write_file(dir.file("vocab.txt"), "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nthe\n");
  Vocab v = Vocab::from_file(dir.file("vocab.txt"));
  CHECK(v.size() == 6);
  CHECK(v.lookup("the") == 5);
  CHECK(v.pad_id() == 0);
  CHECK(v.mask_id() == 4);
  CHECK(v.token_of(5) == "the");
}

TEST_CASE("vocab id assignment is a bijection") {
  std::vector<std::string> tokens = testutil::special_tokens();
  for (int i = 0; i < 200; ++i) tokens.push_back("tok" + std::to_string(i));
  Vocab v = Vocab::from_tokens(tokens);
  for (std::size_t id = 0; id < v.size(); ++id)
    CHECK(v.lookup(v.token_of(static_cast<TokenId>(id))) == static_cast<TokenId>(id));
}

TEST_CASE("duplicate vocab token reports the second line") {
  std::vector<std::string> tokens = testutil::special_tokens();  // lines 0..4
  tokens.push_back("the");                                       // line 5
  tokens.push_back("a");
  tokens.push_back("b");
  tokens.push_back("c");
  tokens.push_back("the");  // line 9
  try {
    Vocab::from_tokens(tokens);
    FAIL("expected DuplicateToken");
  } catch (const PipelineError& e) {
    CHECK(e.code() == ErrorCode::DuplicateToken);
    CHECK(e.line() == 9);
  }
}

TEST_CASE("missing special token and empty lines are rejected") {
  CHECK_THROWS_WITH_AS(Vocab::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "x"}),
                       doctest::Contains("[MASK]"), PipelineError);
  try {
    Vocab::from_tokens({"[PAD]", "", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "x"});
    FAIL("expected EmptyLine");
  } catch (const PipelineError& e) {
    CHECK(e.code() == ErrorCode::EmptyLine);
    CHECK(e.line() == 1);
  }
}

TEST_CASE("reference-sized vocab of 21128 lines loads") {
  TempDir dir;
  std::string content;
  for (const std::string& s : testutil::special_tokens()) content += s + "\n";
  for (int i = 0; i < 21128 - 5; ++i) content += "t" + std::to_string(i) + "\n";
  write_file(dir.file("big.txt"), content);
  Vocab v = Vocab::from_file(dir.file("big.txt"));
  CHECK(v.size() == 21128);
}

TEST_CASE("corpus blank lines separate documents") {
  TempDir dir;
  write_file(dir.file("c.txt"), "a b\nc d\n\ne f\n");
  std::vector<Document> docs = load_corpus(dir.file("c.txt"));
  REQUIRE(docs.size() == 2);
  REQUIRE(docs[0].sentences.size() == 2);
  CHECK(docs[0].sentences[0].words == std::vector<std::string>{"a", "b"});
  CHECK(docs[0].sentences[1].words == std::vector<std::string>{"c", "d"});
  REQUIRE(docs[1].sentences.size() == 1);
  CHECK(docs[1].sentences[0].words == std::vector<std::string>{"e", "f"});
  CHECK(docs[0].source_index == 0);
  CHECK(docs[1].source_index == 1);
}

TEST_CASE("empty corpus fails, stray whitespace is normalized") {
  TempDir dir;
  write_file(dir.file("empty.txt"), "");
  CHECK_THROWS_AS(load_corpus(dir.file("empty.txt")), PipelineError);
  write_file(dir.file("blanks.txt"), "\n\n   \n\n");
  CHECK_THROWS_AS(load_corpus(dir.file("blanks.txt")), PipelineError);

  write_file(dir.file("messy.txt"), "  a   b \n\n\n\nc\n");
  std::vector<Document> docs = load_corpus(dir.file("messy.txt"));
  REQUIRE(docs.size() == 2);
  CHECK(docs[0].sentences[0].words == std::vector<std::string>{"a", "b"});
  CHECK(docs[1].sentences[0].words == std::vector<std::string>{"c"});
}

TEST_CASE("segmented chinese line loads as eleven words") {
  TempDir dir;
  write_file(dir.file("zh.txt"), "使用 语言 模型 来 预测 下 一个 词 的 概率 。\n");
  std::vector<Document> docs = load_corpus(dir.file("zh.txt"));
  REQUIRE(docs.size() == 1);
  REQUIRE(docs[0].sentences.size() == 1);
  CHECK(docs[0].sentences[0].words.size() == 11);
  CHECK(docs[0].sentences[0].words[1] == "语言");
}

TEST_CASE("write_corpus then load_corpus is the identity") {
  TempDir dir;
  Pcg32 rng(7);
  std::vector<Document> docs;
  for (std::size_t d = 0; d < 20; ++d) {
    Document doc;
    doc.source_index = d;
    std::size_t n_sents = 1 + rng.bounded(4);
    for (std::size_t s = 0; s < n_sents; ++s) {
      Sentence sent;
      std::size_t n_words = 1 + rng.bounded(6);
      for (std::size_t w = 0; w < n_words; ++w)
        sent.words.push_back("w" + std::to_string(rng.bounded(50)));
      doc.sentences.push_back(std::move(sent));
    }
    docs.push_back(std::move(doc));
  }
  write_corpus(docs, dir.file("round.txt"));
  CHECK(load_corpus(dir.file("round.txt")) == docs);
}

TEST_CASE("embedding loader enforces the word2vec text contract") {
  TempDir dir;
  write_file(dir.file("ok.vec"), "3 2\nalpha 0.5 0.25\nbeta -1 2\ngamma 3.5 0\n");
  EmbeddingTable t = EmbeddingTable::from_file(dir.file("ok.vec"));
  CHECK(t.size() == 3);
  CHECK(t.dim() == 2);
  CHECK(t.find("beta") == 1);
  CHECK(t.vector_at(0)[1] == doctest::Approx(0.25));

  write_file(dir.file("dim.vec"), "1 2\nalpha 0.5 0.25 0.1\n");
  try {
    EmbeddingTable::from_file(dir.file("dim.vec"));
    FAIL("expected DimensionMismatch");
  } catch (const PipelineError& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }

  write_file(dir.file("zero.vec"), "1 2\nw 0 0\n");
  try {
    EmbeddingTable::from_file(dir.file("zero.vec"));
    FAIL("expected ZeroNormVector");
  } catch (const PipelineError& e) {
    CHECK(e.code() == ErrorCode::ZeroNormVector);
  }

  write_file(dir.file("count.vec"), "3 2\nalpha 1 0\nbeta 0 1\n");
  try {
    EmbeddingTable::from_file(dir.file("count.vec"));
    FAIL("expected HeaderMismatch");
  } catch (const PipelineError& e) {
    CHECK(e.code() == ErrorCode::HeaderMismatch);
  }
}

namespace {

std::vector<TrainingInstance> random_instances(std::size_t n, std::uint64_t seed) {
  Pcg32 rng(seed);
  std::vector<TrainingInstance> out;
  for (std::size_t i = 0; i < n; ++i) {
    TrainingInstance inst;
    std::size_t len = 4 + rng.bounded(28);
    for (std::size_t k = 0; k < len; ++k) {
      inst.input_ids.push_back(static_cast<TokenId>(rng.bounded(1000)));
      inst.segment_ids.push_back(static_cast<TokenId>(rng.bounded(2)));
    }
    std::size_t masked = rng.bounded(5);
    for (std::size_t k = 0; k < masked; ++k) {
      inst.masked_positions.push_back(static_cast<TokenId>(k + 1));
      inst.masked_label_ids.push_back(static_cast<TokenId>(rng.bounded(1000)));
    }
    inst.pair_label = static_cast<TokenId>(rng.bounded(2));
    inst.strategy = static_cast<TokenId>(rng.bounded(5));
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace

TEST_CASE("instance round-trip is the identity in both formats") {
  TempDir dir;
  std::vector<TrainingInstance> instances = random_instances(100, 99);
  for (InstanceFormat format : {InstanceFormat::kJsonl, InstanceFormat::kBinary}) {
    std::string path = dir.file(std::string("r.") + std::string(instance_format_name(format)));
    CHECK(write_instances(instances, path, format) == 100);
    std::vector<TrainingInstance> loaded = read_instances(path, format);
    CHECK(loaded == instances);
  }
}

TEST_CASE("zero instances produce an empty file and zero count") {
  TempDir dir;
  CHECK(write_instances({}, dir.file("zero.jsonl"), InstanceFormat::kJsonl) == 0);
  CHECK(read_instances(dir.file("zero.jsonl"), InstanceFormat::kJsonl).empty());
  CHECK(write_instances({}, dir.file("zero.bin"), InstanceFormat::kBinary) == 0);
  CHECK(read_instances(dir.file("zero.bin"), InstanceFormat::kBinary).empty());
}

TEST_CASE("rewriting the same instances yields byte-identical files") {
  TempDir dir;
  std::vector<TrainingInstance> instances = random_instances(40, 3);
  for (InstanceFormat format : {InstanceFormat::kJsonl, InstanceFormat::kBinary}) {
    std::string p1 = dir.file("a.dat"), p2 = dir.file("b.dat");
    write_instances(instances, p1, format);
    write_instances(instances, p2, format);
    CHECK(testutil::read_file(p1) == testutil::read_file(p2));
    CHECK(!testutil::read_file(p1).empty());
  }
}

TEST_CASE("file_hash64 distinguishes contents") {
  TempDir dir;
  write_file(dir.file("x"), "hello");
  write_file(dir.file("y"), "hello");
  write_file(dir.file("z"), "hello!");
  CHECK(file_hash64(dir.file("x")) == file_hash64(dir.file("y")));
  CHECK(file_hash64(dir.file("x")) != file_hash64(dir.file("z")));
}
