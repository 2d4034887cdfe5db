#include "macpipe/wordpiece.hpp"

#include <stdexcept>

namespace macpipe {

namespace {

constexpr std::size_t kMaxCharsPerWord = 100;

// Returns (code point, byte length). Malformed bytes decode as themselves
// with length 1 so tokenization always makes progress.
std::pair<std::uint32_t, std::size_t> decode_utf8(std::string_view s, std::size_t i) {
  auto byte = [&](std::size_t k) { return static_cast<std::uint32_t>(static_cast<unsigned char>(s[k])); };
  std::uint32_t b0 = byte(i);
  auto cont = [&](std::size_t k) {
    return k < s.size() && (static_cast<unsigned char>(s[k]) & 0xC0u) == 0x80u;
  };
  if (b0 < 0x80u) return {b0, 1};
  if ((b0 & 0xE0u) == 0xC0u && cont(i + 1)) return {((b0 & 0x1Fu) << 6) | (byte(i + 1) & 0x3Fu), 2};
  if ((b0 & 0xF0u) == 0xE0u && cont(i + 1) && cont(i + 2))
    return {((b0 & 0x0Fu) << 12) | ((byte(i + 1) & 0x3Fu) << 6) | (byte(i + 2) & 0x3Fu), 3};
  if ((b0 & 0xF8u) == 0xF0u && cont(i + 1) && cont(i + 2) && cont(i + 3))
    return {((b0 & 0x07u) << 18) | ((byte(i + 1) & 0x3Fu) << 12) | ((byte(i + 2) & 0x3Fu) << 6) |
                (byte(i + 3) & 0x3Fu),
            4};
  return {b0, 1};
}

struct CharSpan {
  std::size_t offset;
  std::size_t bytes;
  std::uint32_t cp;
};

std::vector<CharSpan> char_spans(std::string_view s) {
  std::vector<CharSpan> out;
  std::size_t i = 0;
  while (i < s.size()) {
    auto [cp, len] = decode_utf8(s, i);
    out.push_back({i, len, cp});
    i += len;
  }
  return out;
}

// Greedy longest-match over one unit. Returns false when some remaining piece
// has no vocab entry.
bool match_unit(std::string_view unit, const Vocab& vocab, std::vector<TokenId>& out) {
  std::vector<CharSpan> chars = char_spans(unit);
  std::size_t start = 0;
  while (start < chars.size()) {
    std::size_t best_end = 0;
    TokenId best_id = -1;
    for (std::size_t end = chars.size(); end > start; --end) {
      std::size_t from = chars[start].offset;
      std::size_t to = chars[end - 1].offset + chars[end - 1].bytes;
      std::string piece;
      if (start > 0) piece = "##";
      piece.append(unit.substr(from, to - from));
      TokenId id = vocab.lookup(piece);
      if (id >= 0) {
        best_end = end;
        best_id = id;
        break;
      }
    }
    if (best_id < 0) return false;
    out.push_back(best_id);
    start = best_end;
  }
  return true;
}

}  // namespace

std::size_t utf8_length(std::string_view s) { return char_spans(s).size(); }

bool is_cjk_codepoint(std::uint32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF) ||
         (cp >= 0x20000 && cp <= 0x2A6DF) || (cp >= 0x2A700 && cp <= 0x2B73F) ||
         (cp >= 0x2B740 && cp <= 0x2B81F) || (cp >= 0x2B820 && cp <= 0x2CEAF) ||
         (cp >= 0xF900 && cp <= 0xFAFF) || (cp >= 0x2F800 && cp <= 0x2FA1F);
}

std::vector<TokenId> tokenize_word(std::string_view word, const Vocab& vocab) {
  if (word.empty()) throw std::invalid_argument("tokenize_word: empty word");
  for (char c : word) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r')
      throw std::invalid_argument("tokenize_word: word contains whitespace");
  }
  // "##" opens continuation pieces; a raw word must not begin with it.
  if (word.size() >= 2 && word[0] == '#' && word[1] == '#') return {vocab.unk_id()};

  std::vector<CharSpan> chars = char_spans(word);
  if (chars.size() > kMaxCharsPerWord) return {vocab.unk_id()};

  // CJK characters become standalone units; everything else keeps its run.
  std::vector<std::pair<std::size_t, std::size_t>> units;  // byte ranges
  std::size_t run_start = 0;
  bool in_run = false;
  for (const CharSpan& ch : chars) {
    if (is_cjk_codepoint(ch.cp)) {
      if (in_run) {
        units.emplace_back(run_start, ch.offset);
        in_run = false;
      }
      units.emplace_back(ch.offset, ch.offset + ch.bytes);
    } else if (!in_run) {
      run_start = ch.offset;
      in_run = true;
    }
  }
  if (in_run) units.emplace_back(run_start, word.size());

  std::vector<TokenId> tokens;
  for (auto [from, to] : units) {
    if (!match_unit(word.substr(from, to - from), vocab, tokens)) return {vocab.unk_id()};
  }
  return tokens;
}

TokenizedSentence tokenize_sentence(const Sentence& sentence, const Vocab& vocab) {
  TokenizedSentence out;
  out.words.reserve(sentence.words.size());
  out.word_groups.reserve(sentence.words.size());
  for (const std::string& word : sentence.words) {
    std::vector<TokenId> piece = tokenize_word(word, vocab);
    WordGroup group{static_cast<std::int32_t>(out.tokens.size()),
                    static_cast<std::int32_t>(piece.size())};
    out.tokens.insert(out.tokens.end(), piece.begin(), piece.end());
    out.word_groups.push_back(group);
    out.words.push_back(word);
  }
  return out;
}

std::string detokenize(std::span<const TokenId> tokens, const Vocab& vocab) {
  std::string out;
  for (TokenId id : tokens) {
    const std::string& tok = vocab.token_of(id);  // throws UnknownId
    if (tok.size() >= 2 && tok[0] == '#' && tok[1] == '#') {
      out.append(tok, 2, std::string::npos);
    } else {
      out += tok;
    }
  }
  return out;
}

std::string detokenize_groups(const TokenizedSentence& sentence, const Vocab& vocab) {
  std::string out;
  for (std::size_t k = 0; k < sentence.word_groups.size(); ++k) {
    const WordGroup& g = sentence.word_groups[k];
    if (k > 0) out += ' ';
    out += detokenize(std::span<const TokenId>(sentence.tokens.data() + g.start,
                                               static_cast<std::size_t>(g.length)),
                      vocab);
  }
  return out;
}

}  // namespace macpipe
