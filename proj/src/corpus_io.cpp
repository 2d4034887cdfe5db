#include "macpipe/corpus_io.hpp"

#include <array>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace macpipe {

namespace {

const std::array<std::string_view, 5> kSpecialTokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                        "[MASK]"};

bool is_blank(std::string_view line) {
  for (char c : line) {
    if (c != ' ' && c != '\t' && c != '\r') return false;
  }
  return true;
}

std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) words.emplace_back(line.substr(start, i - start));
  }
  return words;
}

std::string chomp(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

Vocab Vocab::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError(ErrorCode::IoFailure, "cannot open vocab file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(chomp(std::move(line)));
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  v.tokens_ = std::move(tokens);
  v.ids_.reserve(v.tokens_.size());
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    const std::string& tok = v.tokens_[i];
    if (tok.empty())
      throw PipelineError(ErrorCode::EmptyLine, "empty vocab line " + std::to_string(i),
                          static_cast<std::int64_t>(i));
    auto [it, inserted] = v.ids_.emplace(tok, static_cast<TokenId>(i));
    if (!inserted)
      throw PipelineError(ErrorCode::DuplicateToken,
                          "duplicate token '" + tok + "' at line " + std::to_string(i),
                          static_cast<std::int64_t>(i));
  }
  for (std::string_view name : kSpecialTokens) {
    if (v.ids_.find(std::string(name)) == v.ids_.end())
      throw PipelineError(ErrorCode::MissingSpecialToken,
                          "missing special token " + std::string(name));
  }
  v.pad_ = v.ids_.at("[PAD]");
  v.unk_ = v.ids_.at("[UNK]");
  v.cls_ = v.ids_.at("[CLS]");
  v.sep_ = v.ids_.at("[SEP]");
  v.mask_ = v.ids_.at("[MASK]");
  if (v.tokens_.size() <= kSpecialTokens.size())
    throw PipelineError(ErrorCode::InvalidConfig,
                        "vocab needs at least one non-special token");
  return v;
}

const std::string& Vocab::token_of(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw PipelineError(ErrorCode::UnknownId, "token id out of range: " + std::to_string(id), id);
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocab::lookup(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? -1 : it->second;
}

std::vector<Document> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError(ErrorCode::IoFailure, "cannot open corpus file: " + path);
  std::vector<Document> docs;
  Document current;
  auto flush = [&] {
    if (!current.sentences.empty()) {
      current.source_index = docs.size();
      docs.push_back(std::move(current));
      current = Document{};
    }
  };
  std::string line;
  while (std::getline(in, line)) {
    if (is_blank(line)) {
      flush();
      continue;
    }
    current.sentences.push_back(Sentence{split_words(line)});
  }
  flush();
  if (docs.empty()) throw PipelineError(ErrorCode::EmptyCorpus, "corpus has no documents: " + path);
  return docs;
}

void write_corpus(const std::vector<Document>& docs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError(ErrorCode::IoFailure, "cannot open for write: " + path);
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (d > 0) out << '\n';
    for (const Sentence& s : docs[d].sentences) {
      for (std::size_t w = 0; w < s.words.size(); ++w) {
        if (w > 0) out << ' ';
        out << s.words[w];
      }
      out << '\n';
    }
  }
  if (!out) throw PipelineError(ErrorCode::IoFailure, "write failed: " + path);
}

EmbeddingTable EmbeddingTable::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError(ErrorCode::IoFailure, "cannot open embedding file: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw PipelineError(ErrorCode::HeaderMismatch, "embedding file is empty: " + path);
  std::istringstream header(chomp(std::move(line)));
  std::int64_t count = 0;
  int dim = 0;
  std::string extra;
  if (!(header >> count >> dim) || (header >> extra) || count < 0 || dim <= 0)
    throw PipelineError(ErrorCode::HeaderMismatch, "bad embedding header, want 'count dim'");

  std::vector<std::pair<std::string, std::vector<double>>> entries;
  entries.reserve(static_cast<std::size_t>(count));
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    std::vector<std::string> parts = split_words(line);
    if (parts.size() != static_cast<std::size_t>(dim) + 1)
      throw PipelineError(ErrorCode::DimensionMismatch,
                          "line " + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                              " components, got " + std::to_string(parts.size() - 1),
                          line_no);
    std::vector<double> vec(static_cast<std::size_t>(dim));
    for (int k = 0; k < dim; ++k) {
      char* end = nullptr;
      vec[static_cast<std::size_t>(k)] = std::strtod(parts[static_cast<std::size_t>(k) + 1].c_str(), &end);
      if (end == nullptr || *end != '\0')
        throw PipelineError(ErrorCode::DimensionMismatch,
                            "line " + std::to_string(line_no) + ": bad float '" +
                                parts[static_cast<std::size_t>(k) + 1] + "'",
                            line_no);
    }
    entries.emplace_back(std::move(parts[0]), std::move(vec));
  }
  if (entries.size() != static_cast<std::size_t>(count))
    throw PipelineError(ErrorCode::HeaderMismatch,
                        "header promised " + std::to_string(count) + " entries, file has " +
                            std::to_string(entries.size()));
  return from_entries(dim, std::move(entries));
}

EmbeddingTable EmbeddingTable::from_entries(
    int dim, std::vector<std::pair<std::string, std::vector<double>>> entries) {
  if (dim <= 0) throw PipelineError(ErrorCode::HeaderMismatch, "embedding dim must be positive");
  EmbeddingTable t;
  t.dim_ = dim;
  t.words_.reserve(entries.size());
  t.vectors_.reserve(entries.size() * static_cast<std::size_t>(dim));
  for (auto& [word, vec] : entries) {
    if (vec.size() != static_cast<std::size_t>(dim))
      throw PipelineError(ErrorCode::DimensionMismatch, "vector dim mismatch for '" + word + "'");
    double norm2 = 0.0;
    for (double x : vec) norm2 += x * x;
    if (norm2 == 0.0)
      throw PipelineError(ErrorCode::ZeroNormVector, "zero-norm vector for '" + word + "'");
    auto [it, inserted] = t.index_.emplace(word, static_cast<std::int64_t>(t.words_.size()));
    if (!inserted)
      throw PipelineError(ErrorCode::DuplicateToken, "duplicate embedding word '" + word + "'");
    t.words_.push_back(std::move(word));
    t.vectors_.insert(t.vectors_.end(), vec.begin(), vec.end());
  }
  return t;
}

std::int64_t EmbeddingTable::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? -1 : it->second;
}

InstanceFormat instance_format_from_name(std::string_view name) {
  if (name == "jsonl") return InstanceFormat::kJsonl;
  if (name == "binary") return InstanceFormat::kBinary;
  throw PipelineError(ErrorCode::InvalidConfig, "unknown instance format: " + std::string(name));
}

std::string_view instance_format_name(InstanceFormat f) {
  return f == InstanceFormat::kJsonl ? "jsonl" : "binary";
}

namespace {

void put_u32(std::string& out, std::uint32_t x) {
  out.push_back(static_cast<char>(x & 0xFF));
  out.push_back(static_cast<char>((x >> 8) & 0xFF));
  out.push_back(static_cast<char>((x >> 16) & 0xFF));
  out.push_back(static_cast<char>((x >> 24) & 0xFF));
}

void put_i32_array(std::string& out, std::span<const TokenId> a) {
  put_u32(out, static_cast<std::uint32_t>(a.size()));
  for (TokenId x : a) put_u32(out, static_cast<std::uint32_t>(x));
}

std::uint32_t get_u32(std::string_view buf, std::size_t& pos) {
  if (pos + 4 > buf.size())
    throw PipelineError(ErrorCode::IoFailure, "truncated binary instance record");
  auto b = [&](int k) { return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + k])); };
  std::uint32_t x = b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
  pos += 4;
  return x;
}

std::vector<TokenId> get_i32_array(std::string_view buf, std::size_t& pos) {
  std::uint32_t n = get_u32(buf, pos);
  std::vector<TokenId> out(n);
  for (std::uint32_t i = 0; i < n; ++i) out[i] = static_cast<TokenId>(get_u32(buf, pos));
  return out;
}

std::string encode_record(const TrainingInstance& inst) {
  std::string payload;
  put_i32_array(payload, inst.input_ids);
  put_i32_array(payload, inst.segment_ids);
  put_i32_array(payload, inst.masked_positions);
  put_i32_array(payload, inst.masked_label_ids);
  put_i32_array(payload, std::span<const TokenId>(&inst.pair_label, 1));
  put_i32_array(payload, std::span<const TokenId>(&inst.strategy, 1));
  std::string record;
  put_u32(record, static_cast<std::uint32_t>(payload.size()));
  record += payload;
  return record;
}

nlohmann::ordered_json to_json(const TrainingInstance& inst) {
  nlohmann::ordered_json j;
  j["input_ids"] = inst.input_ids;
  j["segment_ids"] = inst.segment_ids;
  j["masked_positions"] = inst.masked_positions;
  j["masked_label_ids"] = inst.masked_label_ids;
  j["pair_label"] = inst.pair_label;
  j["strategy"] = inst.strategy;
  return j;
}

TrainingInstance from_json(const nlohmann::json& j) {
  TrainingInstance inst;
  inst.input_ids = j.at("input_ids").get<std::vector<TokenId>>();
  inst.segment_ids = j.at("segment_ids").get<std::vector<TokenId>>();
  inst.masked_positions = j.at("masked_positions").get<std::vector<TokenId>>();
  inst.masked_label_ids = j.at("masked_label_ids").get<std::vector<TokenId>>();
  inst.pair_label = j.at("pair_label").get<TokenId>();
  inst.strategy = j.at("strategy").get<TokenId>();
  return inst;
}

}  // namespace

std::size_t write_instances(std::span<const TrainingInstance> instances, const std::string& path,
                            InstanceFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError(ErrorCode::IoFailure, "cannot open for write: " + path);
  for (const TrainingInstance& inst : instances) {
    if (format == InstanceFormat::kJsonl) {
      out << to_json(inst).dump() << '\n';
    } else {
      std::string rec = encode_record(inst);
      out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    }
  }
  out.flush();
  if (!out) throw PipelineError(ErrorCode::IoFailure, "write failed: " + path);
  return instances.size();
}

std::vector<TrainingInstance> read_instances(const std::string& path, InstanceFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError(ErrorCode::IoFailure, "cannot open instance file: " + path);
  std::vector<TrainingInstance> out;
  if (format == InstanceFormat::kJsonl) {
    std::string line;
    while (std::getline(in, line)) {
      if (is_blank(line)) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded())
        throw PipelineError(ErrorCode::IoFailure, "bad jsonl record in " + path);
      out.push_back(from_json(j));
    }
  } else {
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    while (pos < buf.size()) {
      std::uint32_t len = get_u32(buf, pos);
      if (pos + len > buf.size())
        throw PipelineError(ErrorCode::IoFailure, "truncated binary instance record");
      std::size_t end = pos + len;
      TrainingInstance inst;
      inst.input_ids = get_i32_array(buf, pos);
      inst.segment_ids = get_i32_array(buf, pos);
      inst.masked_positions = get_i32_array(buf, pos);
      inst.masked_label_ids = get_i32_array(buf, pos);
      std::vector<TokenId> pair = get_i32_array(buf, pos);
      std::vector<TokenId> strat = get_i32_array(buf, pos);
      if (pair.size() != 1 || strat.size() != 1 || pos != end)
        throw PipelineError(ErrorCode::IoFailure, "malformed binary instance record");
      inst.pair_label = pair[0];
      inst.strategy = strat[0];
      out.push_back(std::move(inst));
    }
  }
  return out;
}

std::uint64_t file_hash64(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError(ErrorCode::IoFailure, "cannot open for hashing: " + path);
  std::uint64_t h = 14695981039346656037ull;
  char chunk[4096];
  while (in.read(chunk, sizeof(chunk)) || in.gcount() > 0) {
    std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(chunk[i]);
      h *= 1099511628211ull;
    }
    if (in.eof()) break;
  }
  return h;
}

}  // namespace macpipe
