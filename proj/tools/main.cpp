#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "macpipe/corpus_io.hpp"
#include "macpipe/instance_builder.hpp"
#include "macpipe/instance_stats.hpp"
#include "macpipe/masking_engine.hpp"
#include "macpipe/synonym_index.hpp"
#include "macpipe/trainer.hpp"
#include "macpipe/wordpiece.hpp"

namespace {

using namespace macpipe;

constexpr int kExitOk = 0;
constexpr int kExitData = 1;
constexpr int kExitUsage = 2;

// MAC_SEED beats any seed from flags or config files.
std::optional<std::uint64_t> env_seed_override() {
  const char* raw = std::getenv("MAC_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  char* end = nullptr;
  std::uint64_t value = std::strtoull(raw, &end, 10);
  if (end == nullptr || *end != '\0')
    throw CLI::ValidationError("MAC_SEED", "MAC_SEED must be an unsigned integer");
  return value;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError(ErrorCode::IoFailure, "cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      std::size_t a = s.find_first_not_of(" \t\r");
      std::size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    std::size_t eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw PipelineError(ErrorCode::InvalidConfig,
                          "config line " + std::to_string(line_no) + ": expected key=value");
    kv[trim(trimmed.substr(0, eq))] = trim(trimmed.substr(eq + 1));
  }
  return kv;
}

class ConfigReader {
 public:
  explicit ConfigReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  std::string get_string(const std::string& key, const std::string& fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    used_.insert(key);
    return it->second;
  }
  double get_double(const std::string& key, double fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    used_.insert(key);
    std::size_t used = 0;
    double value = std::stod(it->second, &used);
    require_consumed(key, it->second, used);
    return value;
  }
  std::int64_t get_int(const std::string& key, std::int64_t fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    used_.insert(key);
    std::size_t used = 0;
    std::int64_t value = std::stoll(it->second, &used);
    require_consumed(key, it->second, used);
    return value;
  }
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    used_.insert(key);
    char* end = nullptr;
    std::uint64_t value = std::strtoull(it->second.c_str(), &end, 10);
    if (end == nullptr || *end != '\0')
      throw PipelineError(ErrorCode::InvalidConfig, "bad value for " + key + ": " + it->second);
    return value;
  }
  void reject_unknown() const {
    for (const auto& [key, value] : kv_) {
      if (used_.find(key) == used_.end())
        throw PipelineError(ErrorCode::InvalidConfig, "unknown config key: " + key);
    }
  }

 private:
  static void require_consumed(const std::string& key, const std::string& value,
                               std::size_t used) {
    if (used != value.size())
      throw PipelineError(ErrorCode::InvalidConfig, "bad value for " + key + ": " + value);
  }

  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

NgramSchedule parse_schedule(const std::string& text) {
  NgramSchedule schedule;
  std::size_t pos = 0;
  for (int i = 0; i < 4; ++i) {
    std::size_t comma = text.find(',', pos);
    std::string part =
        comma == std::string::npos ? text.substr(pos) : text.substr(pos, comma - pos);
    schedule.weights[static_cast<std::size_t>(i)] = std::stod(part);
    if (comma == std::string::npos && i < 3)
      throw PipelineError(ErrorCode::InvalidConfig, "schedule needs 4 comma-separated weights");
    pos = comma + 1;
  }
  return schedule;
}

struct PipelineOptions {
  BuildConfig build;
  ModelConfig model;
  TrainConfig train;
  std::vector<Strategy> strategies;
};

PipelineOptions read_pipeline_config(const std::string& path) {
  ConfigReader cfg(parse_config_file(path));
  PipelineOptions opt;
  opt.build.pair.task = pair_task_from_name(cfg.get_string("task", "sop"));
  opt.build.pair.negative_fraction = cfg.get_double("negative_fraction", 0.5);
  opt.build.pair.max_seq_len = static_cast<std::int32_t>(cfg.get_int("max_seq_len", 512));
  opt.build.masking.strategy = strategy_from_name(cfg.get_string("strategy", "mac"));
  opt.build.masking.mask_budget_fraction = cfg.get_double("budget", 0.15);
  opt.build.masking.schedule = parse_schedule(cfg.get_string("schedule", "0.4,0.3,0.2,0.1"));
  opt.build.masking.seed = cfg.get_u64("seed", 0);

  opt.model.layers = static_cast<std::int32_t>(cfg.get_int("layers", 2));
  opt.model.hidden = static_cast<std::int32_t>(cfg.get_int("hidden", 64));
  opt.model.heads = static_cast<std::int32_t>(cfg.get_int("heads", 2));
  opt.model.ffn = static_cast<std::int32_t>(cfg.get_int("ffn", 256));
  opt.model.max_len = static_cast<std::int32_t>(cfg.get_int("max_len", 128));

  opt.train.steps = cfg.get_int("steps", 100);
  opt.train.batch_size = static_cast<std::int32_t>(cfg.get_int("batch_size", 16));
  opt.train.learning_rate = cfg.get_double("learning_rate", 1e-3);
  opt.train.warmup_steps = cfg.get_int("warmup_steps", 10);
  opt.train.weight_decay = cfg.get_double("weight_decay", 0.01);
  opt.train.eval_every = cfg.get_int("eval_every", 10);
  opt.train.seed = opt.build.masking.seed;

  std::string strategies = cfg.get_string("strategies", "mac,random_replace,partial_mask,all_mask");
  std::size_t pos = 0;
  while (pos <= strategies.size()) {
    std::size_t comma = strategies.find(',', pos);
    std::string name = comma == std::string::npos ? strategies.substr(pos)
                                                  : strategies.substr(pos, comma - pos);
    if (!name.empty()) opt.strategies.push_back(strategy_from_name(name));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  cfg.reject_unknown();
  return opt;
}

int cmd_tokenize(const std::string& vocab_path, const std::string& input_path,
                 const std::string& output_path) {
  Vocab vocab = Vocab::from_file(vocab_path);
  std::vector<Document> corpus = load_corpus(input_path);
  std::ofstream out(output_path, std::ios::binary);
  if (!out) throw PipelineError(ErrorCode::IoFailure, "cannot open for write: " + output_path);
  for (const Document& doc : corpus) {
    for (const Sentence& sentence : doc.sentences) {
      TokenizedSentence ts = tokenize_sentence(sentence, vocab);
      for (std::size_t g = 0; g < ts.word_groups.size(); ++g) {
        if (g > 0) out << " | ";
        const WordGroup& group = ts.word_groups[g];
        for (std::int32_t t = 0; t < group.length; ++t) {
          if (t > 0) out << ' ';
          out << vocab.token_of(ts.tokens[static_cast<std::size_t>(group.start + t)]);
        }
      }
      out << '\n';
    }
  }
  if (!out) throw PipelineError(ErrorCode::IoFailure, "write failed: " + output_path);
  return kExitOk;
}

void write_build_sidecar(const std::string& path, const InstanceStats& stats,
                         const EngineStats& engine, const BuildConfig& config,
                         InstanceFormat format) {
  nlohmann::ordered_json j;
  j["instance_count"] = stats.instance_count;
  j["content_token_count"] = stats.content_token_count;
  j["masked_position_count"] = stats.masked_position_count;
  j["realized_mask_fraction"] = stats.realized_mask_fraction();
  j["mask_token_count"] = stats.mask_token_count;
  j["mask_token_fraction_of_masked"] = stats.fraction_of_masked(stats.mask_token_count);
  j["changed_fraction_of_masked"] = stats.fraction_of_masked(stats.changed_count);
  j["kept_fraction_of_masked"] = stats.fraction_of_masked(stats.kept_count);
  j["pair_positive"] = stats.pair_positive;
  j["pair_negative"] = stats.pair_negative;
  j["negative_fraction"] = stats.negative_fraction();
  j["strategy"] = strategy_name(config.masking.strategy);
  j["task"] = pair_task_name(config.pair.task);
  j["seed"] = config.masking.seed;
  j["format"] = instance_format_name(format);
  nlohmann::ordered_json je;
  je["span_count"] = engine.span_count;
  nlohmann::ordered_json counts;
  counts["similar"] = engine.treatment_counts[0];
  counts["random"] = engine.treatment_counts[1];
  counts["keep"] = engine.treatment_counts[2];
  counts["mask_token"] = engine.treatment_counts[3];
  je["treatment_counts"] = counts;
  nlohmann::ordered_json fracs;
  double total = engine.span_count == 0 ? 1.0 : static_cast<double>(engine.span_count);
  fracs["similar"] = static_cast<double>(engine.treatment_counts[0]) / total;
  fracs["random"] = static_cast<double>(engine.treatment_counts[1]) / total;
  fracs["keep"] = static_cast<double>(engine.treatment_counts[2]) / total;
  fracs["mask_token"] = static_cast<double>(engine.treatment_counts[3]) / total;
  je["treatment_fractions"] = fracs;
  je["ngram_histogram"] = engine.ngram_histogram;
  nlohmann::ordered_json nf = nlohmann::ordered_json::array();
  for (std::size_t count : engine.ngram_histogram)
    nf.push_back(static_cast<double>(count) / total);
  je["ngram_fractions"] = nf;
  j["engine"] = je;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError(ErrorCode::IoFailure, "cannot open for write: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw PipelineError(ErrorCode::IoFailure, "write failed: " + path);
}

int cmd_build(const std::string& vocab_path, const std::string& embeddings_path,
              const std::string& input_path, const std::string& output_path,
              const std::string& strategy_name_arg, const std::string& task_name,
              std::uint64_t seed, std::int32_t max_seq_len, const std::string& format_name,
              double negative_fraction, int threads) {
  Vocab vocab = Vocab::from_file(vocab_path);
  std::vector<Document> corpus = load_corpus(input_path);

  std::optional<EmbeddingTable> table;
  std::optional<SynonymIndex> index;
  if (!embeddings_path.empty()) {
    table = EmbeddingTable::from_file(embeddings_path);
    index.emplace(*table, vocab);
  }

  BuildConfig config;
  config.masking.strategy = strategy_from_name(strategy_name_arg);
  config.masking.seed = seed;
  config.pair.task = pair_task_from_name(task_name);
  config.pair.max_seq_len = max_seq_len;
  config.pair.negative_fraction = negative_fraction;
  config.pair.validate();
  config.masking.validate();
  InstanceFormat format = instance_format_from_name(format_name);

  // Documents are independent; shard them, then merge in document order so
  // output bytes do not depend on the thread count.
  std::size_t worker_count = std::max(1, threads);
  std::vector<std::vector<TrainingInstance>> per_doc(corpus.size());
  std::vector<EngineStats> per_doc_stats(corpus.size());
  auto work = [&](std::size_t worker) {
    for (std::size_t d = worker; d < corpus.size(); d += worker_count) {
      per_doc[d] = build_document_instances(corpus, d, config, vocab,
                                            index ? &*index : nullptr, &per_doc_stats[d]);
    }
  };
  if (worker_count == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(worker_count);
    for (std::size_t w = 0; w < worker_count; ++w) pool.emplace_back(work, w);
    for (std::thread& t : pool) t.join();
  }

  std::vector<TrainingInstance> instances;
  EngineStats engine;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    for (TrainingInstance& inst : per_doc[d]) instances.push_back(std::move(inst));
    engine.merge(per_doc_stats[d]);
  }

  std::size_t written = write_instances(instances, output_path, format);
  InstanceStats stats = compute_instance_stats(instances, vocab);
  write_build_sidecar(output_path + ".stats.json", stats, engine, config, format);
  std::cout << "wrote " << written << " instances to " << output_path << '\n';
  return kExitOk;
}

int cmd_synonyms(const std::string& embeddings_path, const std::string& vocab_path,
                 const std::string& word, int top_k, double min_sim, int token_length,
                 const std::string& cache_path) {
  Vocab vocab = Vocab::from_file(vocab_path);
  EmbeddingTable table = EmbeddingTable::from_file(embeddings_path);

  SynonymQuery query;
  query.word = word;
  query.top_k = top_k;
  query.min_similarity = min_sim;
  query.required_token_length = token_length;

  std::vector<std::pair<std::string, double>> candidates;
  if (!cache_path.empty()) {
    std::uint64_t hash = file_hash64(embeddings_path);
    std::optional<SynonymCache> cache = SynonymCache::load(cache_path);
    if (!cache || cache->embedding_hash != hash) {
      cache = SynonymCache{};
      cache->embedding_hash = hash;
    }
    auto it = cache->entries.find(word);
    if (it != cache->entries.end() && token_length == 0) {
      candidates = it->second;
    } else {
      SynonymIndex index(table, vocab);
      candidates = index.nearest(query).candidates;
      if (token_length == 0) {
        cache->entries[word] = candidates;
        cache->save(cache_path);
      }
    }
  } else {
    SynonymIndex index(table, vocab);
    candidates = index.nearest(query).candidates;
  }

  char buf[64];
  for (const auto& [cand, sim] : candidates) {
    std::snprintf(buf, sizeof(buf), "%.6f", sim);
    std::cout << cand << '\t' << buf << '\n';
  }
  return kExitOk;
}

std::vector<TrainingInstance> load_any_instances(const std::string& path) {
  // Binary records never start with '{', jsonl records always do.
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw PipelineError(ErrorCode::IoFailure, "cannot open instance file: " + path);
  int first = probe.peek();
  probe.close();
  return read_instances(path,
                        first == '{' ? InstanceFormat::kJsonl : InstanceFormat::kBinary);
}

int cmd_train(const std::string& corpus_path, const std::string& instances_path,
              const std::string& vocab_path, const std::string& embeddings_path,
              const std::string& config_path, const std::string& out_dir) {
  Vocab vocab = Vocab::from_file(vocab_path);
  PipelineOptions opt = read_pipeline_config(config_path);
  if (auto seed = env_seed_override()) {
    opt.build.masking.seed = *seed;
    opt.train.seed = *seed;
  }
  opt.train.validate();
  opt.model.vocab_size = static_cast<std::int32_t>(vocab.size());

  std::optional<EmbeddingTable> table;
  std::optional<SynonymIndex> index;
  if (!embeddings_path.empty()) {
    table = EmbeddingTable::from_file(embeddings_path);
    index.emplace(*table, vocab);
  }

  std::filesystem::create_directories(out_dir);
  std::vector<Document> corpus;
  std::unique_ptr<InstanceStream> stream;
  if (!corpus_path.empty()) {
    corpus = load_corpus(corpus_path);
    stream = std::make_unique<CorpusInstanceStream>(corpus, opt.build, vocab,
                                                    index ? &*index : nullptr);
  } else {
    stream = std::make_unique<VectorInstanceStream>(load_any_instances(instances_path));
  }

  TaskWeights weights;
  weights.pair = opt.build.pair.task == PairTask::kNone ? 0.0 : 1.0;
  ModelParams model = ModelParams::init(opt.model, opt.train.seed);
  TrainResult result = train(std::move(model), *stream, opt.train, vocab, weights);
  result.report.strategy = std::string(strategy_name(opt.build.masking.strategy));
  write_report_csv(result.report, out_dir + "/" + result.report.strategy + ".csv");
  result.params.save(out_dir + "/model.ckpt");
  const EvalRecord& last = result.report.records.back();
  std::cout << "final step " << last.step << " mlm_loss " << last.mlm_loss << " recovery_acc "
            << last.recovery_acc << " pair_acc " << last.pair_acc << '\n';
  return kExitOk;
}

int cmd_ablate(const std::string& corpus_path, const std::string& vocab_path,
               const std::string& embeddings_path, const std::string& config_path,
               const std::string& out_dir) {
  Vocab vocab = Vocab::from_file(vocab_path);
  PipelineOptions opt = read_pipeline_config(config_path);
  if (auto seed = env_seed_override()) {
    opt.build.masking.seed = *seed;
    opt.train.seed = *seed;
  }
  opt.train.validate();
  opt.model.vocab_size = static_cast<std::int32_t>(vocab.size());

  std::vector<Document> corpus = load_corpus(corpus_path);
  std::optional<EmbeddingTable> table;
  std::optional<SynonymIndex> index;
  if (!embeddings_path.empty()) {
    table = EmbeddingTable::from_file(embeddings_path);
    index.emplace(*table, vocab);
  }
  std::filesystem::create_directories(out_dir);
  std::vector<RunReport> reports =
      ablate_strategies(corpus, opt.strategies, opt.build, opt.model, opt.train, vocab,
                        index ? &*index : nullptr, out_dir);
  std::cout << "strategy,final_mlm_loss,final_recovery_acc,final_pair_acc\n";
  for (const RunReport& report : reports) {
    const EvalRecord& last = report.records.back();
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f\n", report.strategy.c_str(), last.mlm_loss,
                  last.recovery_acc, last.pair_acc);
    std::cout << buf;
  }
  return kExitOk;
}

int cmd_stats(const std::string& instances_path, const std::string& vocab_path) {
  Vocab vocab = Vocab::from_file(vocab_path);
  std::vector<TrainingInstance> instances = load_any_instances(instances_path);
  InstanceStats stats = compute_instance_stats(instances, vocab);
  nlohmann::ordered_json j;
  j["instance_count"] = stats.instance_count;
  j["content_token_count"] = stats.content_token_count;
  j["masked_position_count"] = stats.masked_position_count;
  j["realized_mask_fraction"] = stats.realized_mask_fraction();
  j["mask_token_count"] = stats.mask_token_count;
  j["mask_token_fraction_of_masked"] = stats.fraction_of_masked(stats.mask_token_count);
  j["changed_fraction_of_masked"] = stats.fraction_of_masked(stats.changed_count);
  j["kept_fraction_of_masked"] = stats.fraction_of_masked(stats.kept_count);
  j["pair_positive"] = stats.pair_positive;
  j["pair_negative"] = stats.pair_negative;
  j["negative_fraction"] = stats.negative_fraction();
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MLM-as-correction pre-training data pipeline"};
  app.require_subcommand(1);

  std::string vocab_path, input_path, output_path, embeddings_path, corpus_path, instances_path;
  std::string config_path, out_dir, cache_path, word;
  std::string strategy = "mac", task = "sop", format = "jsonl";
  std::uint64_t seed = 0;
  std::int32_t max_seq_len = 512;
  double negative_fraction = 0.5, min_sim = 0.5;
  int threads = 1, top_k = 10, token_length = 0;

  CLI::App* tokenize = app.add_subcommand("tokenize", "tokenize a corpus with word groups");
  tokenize->add_option("--vocab", vocab_path)->required();
  tokenize->add_option("--input", input_path)->required();
  tokenize->add_option("--output", output_path)->required();

  CLI::App* build = app.add_subcommand("build", "build masked training instances");
  build->add_option("--vocab", vocab_path)->required();
  build->add_option("--embeddings", embeddings_path);
  build->add_option("--input", input_path)->required();
  build->add_option("--output", output_path)->required();
  build->add_option("--strategy", strategy);
  build->add_option("--task", task);
  build->add_option("--seed", seed);
  build->add_option("--max-seq-len", max_seq_len);
  build->add_option("--format", format);
  build->add_option("--negative-fraction", negative_fraction);
  build->add_option("--threads", threads);

  CLI::App* synonyms = app.add_subcommand("synonyms", "look up similar words");
  synonyms->add_option("--embeddings", embeddings_path)->required();
  synonyms->add_option("--vocab", vocab_path)->required();
  synonyms->add_option("--word", word)->required();
  synonyms->add_option("--top-k", top_k);
  synonyms->add_option("--min-sim", min_sim);
  synonyms->add_option("--token-length", token_length);
  synonyms->add_option("--cache", cache_path);

  CLI::App* train_cmd = app.add_subcommand("train", "train the toy encoder");
  train_cmd->add_option("--corpus", corpus_path);
  train_cmd->add_option("--instances", instances_path);
  train_cmd->add_option("--vocab", vocab_path)->required();
  train_cmd->add_option("--embeddings", embeddings_path);
  train_cmd->add_option("--config", config_path)->required();
  train_cmd->add_option("--out-dir", out_dir)->required();

  CLI::App* ablate = app.add_subcommand("ablate", "compare masking strategies");
  ablate->add_option("--corpus", corpus_path)->required();
  ablate->add_option("--vocab", vocab_path)->required();
  ablate->add_option("--embeddings", embeddings_path);
  ablate->add_option("--config", config_path)->required();
  ablate->add_option("--out-dir", out_dir)->required();

  CLI::App* stats = app.add_subcommand("stats", "recompute stats from an instance file");
  stats->add_option("--instances", instances_path)->required();
  stats->add_option("--vocab", vocab_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (auto seed_override = env_seed_override()) seed = *seed_override;
    if (tokenize->parsed()) return cmd_tokenize(vocab_path, input_path, output_path);
    if (build->parsed())
      return cmd_build(vocab_path, embeddings_path, input_path, output_path, strategy, task, seed,
                       max_seq_len, format, negative_fraction, threads);
    if (synonyms->parsed())
      return cmd_synonyms(embeddings_path, vocab_path, word, top_k, min_sim, token_length,
                          cache_path);
    if (train_cmd->parsed()) {
      if (corpus_path.empty() == instances_path.empty()) {
        std::cerr << "train needs exactly one of --corpus or --instances\n";
        return kExitUsage;
      }
      return cmd_train(corpus_path, instances_path, vocab_path, embeddings_path, config_path,
                       out_dir);
    }
    if (ablate->parsed())
      return cmd_ablate(corpus_path, vocab_path, embeddings_path, config_path, out_dir);
    if (stats->parsed()) return cmd_stats(instances_path, vocab_path);
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << '\n';
    return kExitUsage;
  } catch (const PipelineError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::InvalidConfig ? kExitUsage : kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
