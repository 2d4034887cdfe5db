#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "macpipe/corpus_io.hpp"

namespace macpipe {

// Contiguous token range belonging to one source word.
struct WordGroup {
  std::int32_t start = 0;
  std::int32_t length = 0;
  bool operator==(const WordGroup&) const = default;
};

// WordPiece tokens plus whole-word group boundaries. Groups partition
// [0, tokens.size()) in word order; words[k] is the source string of group k.
struct TokenizedSentence {
  std::vector<TokenId> tokens;
  std::vector<WordGroup> word_groups;
  std::vector<std::string> words;

  std::size_t token_count() const { return tokens.size(); }
  std::size_t word_count() const { return word_groups.size(); }
};

// Greedy longest-match-first subword split. CJK characters are isolated into
// single-character units first, so multi-character CJK words come out as
// plain per-character tokens (no "##" continuation inside the word), while
// alphabetic words split into "piece ##piece ..." runs. Any unmatched piece
// collapses the whole word to a single [UNK]. Words longer than 100
// characters map to [UNK]. Empty or whitespace-bearing words are rejected.
std::vector<TokenId> tokenize_word(std::string_view word, const Vocab& vocab);

TokenizedSentence tokenize_sentence(const Sentence& sentence, const Vocab& vocab);

// Concatenates token strings, stripping "##" markers. Inverse of
// tokenize_word on UNK-free in-vocab words. Throws UnknownId out of range.
std::string detokenize(std::span<const TokenId> tokens, const Vocab& vocab);

// Joins the detokenized groups with single spaces.
std::string detokenize_groups(const TokenizedSentence& sentence, const Vocab& vocab);

// Decoded code point count; used for the 100-character word cap and tests.
std::size_t utf8_length(std::string_view s);

bool is_cjk_codepoint(std::uint32_t cp);

}  // namespace macpipe
