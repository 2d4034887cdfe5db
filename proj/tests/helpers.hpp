#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "macpipe/corpus_io.hpp"
#include "macpipe/rng.hpp"

namespace testutil {

// Self-deleting scratch directory for file-based tests.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "macpipe_XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (mkdtemp(buf.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> special_tokens() {
  return {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
}

inline macpipe::Vocab make_vocab(std::vector<std::string> extra) {
  std::vector<std::string> tokens = special_tokens();
  tokens.insert(tokens.end(), extra.begin(), extra.end());
  return macpipe::Vocab::from_tokens(std::move(tokens));
}

// Vocabulary that tokenizes any lowercase ASCII word UNK-free: all single
// letters both as word starts and continuations, plus a few longer pieces.
inline macpipe::Vocab make_letters_vocab() {
  std::vector<std::string> extra;
  for (char c = 'a'; c <= 'z'; ++c) {
    extra.push_back(std::string(1, c));
    extra.push_back("##" + std::string(1, c));
  }
  for (const char* piece : {"un", "able", "ing", "pre", "pro", "##able", "##ing", "##ba",
                            "##bility", "##di", "##ct", "##er", "th", "##the"})
    extra.push_back(piece);
  return make_vocab(extra);
}

// Synthetic word universe grouped into synonym families. Family f has
// `members` words; "s<f>m<m>" words are single-token, "d<f>m<m>x" words are
// two-token ("d<f>m<m>" + "##x"). Embeddings are near-one-hot per family so
// within-family cosine is ~1 and cross-family cosine is small.
struct SynonymFixture {
  std::vector<std::string> vocab_tokens;  // non-special tokens
  std::vector<std::pair<std::string, std::vector<double>>> embeddings;
  int dim = 0;
  std::vector<std::string> one_token_words;
  std::vector<std::string> two_token_words;
};

inline SynonymFixture make_synonym_fixture(int families, int members, std::uint64_t seed) {
  SynonymFixture fx;
  fx.dim = families;
  macpipe::Pcg32 rng(seed);
  fx.vocab_tokens.push_back("##x");
  for (int f = 0; f < families; ++f) {
    for (int m = 0; m < members; ++m) {
      std::string single = "s" + std::to_string(f) + "m" + std::to_string(m);
      std::string stem = "d" + std::to_string(f) + "m" + std::to_string(m);
      fx.vocab_tokens.push_back(single);
      fx.vocab_tokens.push_back(stem);
      fx.one_token_words.push_back(single);
      fx.two_token_words.push_back(stem + "x");
      for (const std::string& word : {single, stem + "x"}) {
        std::vector<double> vec(static_cast<std::size_t>(families), 0.0);
        vec[static_cast<std::size_t>(f)] = 1.0;
        for (double& x : vec) x += (rng.next_double() - 0.5) * 0.05;
        fx.embeddings.emplace_back(word, vec);
      }
    }
  }
  return fx;
}

inline macpipe::Vocab fixture_vocab(const SynonymFixture& fx) {
  return make_vocab(fx.vocab_tokens);
}

inline macpipe::EmbeddingTable fixture_table(const SynonymFixture& fx) {
  return macpipe::EmbeddingTable::from_entries(fx.dim, fx.embeddings);
}

// Sentence lengths whose token budget rounds at or below the exact 15%, so
// corpus-level realized fractions stay inside [0.13, 0.15].
inline std::size_t budget_friendly_length(macpipe::Pcg32& rng) {
  static const int kResidues[] = {0, 1, 2, 3, 7, 8, 9, 14, 15, 16};
  std::size_t base = 20 + 20 * rng.bounded(3);  // 20, 40, 60
  return base + static_cast<std::size_t>(kResidues[rng.bounded(10)]);
}

// Corpus of single-token words drawn from the fixture's word list.
inline std::vector<macpipe::Document> make_budget_corpus(const SynonymFixture& fx,
                                                         std::size_t min_tokens,
                                                         std::uint64_t seed,
                                                         std::size_t sentences_per_doc = 4) {
  macpipe::Pcg32 rng(seed);
  std::vector<macpipe::Document> docs;
  std::size_t total = 0;
  while (total < min_tokens) {
    macpipe::Document doc;
    doc.source_index = docs.size();
    for (std::size_t s = 0; s < sentences_per_doc; ++s) {
      macpipe::Sentence sent;
      std::size_t len = budget_friendly_length(rng);
      for (std::size_t w = 0; w < len; ++w) {
        sent.words.push_back(fx.one_token_words[rng.bounded(
            static_cast<std::uint32_t>(fx.one_token_words.size()))]);
      }
      total += len;
      doc.sentences.push_back(std::move(sent));
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace testutil
