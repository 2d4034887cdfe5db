#include "macpipe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace macpipe {

namespace {

constexpr std::uint64_t kEpochSeedTag = 0x45504F4348ull;    // "EPOCH"
constexpr std::uint64_t kShuffleSeedTag = 0x53485546ull;    // "SHUF"
constexpr std::uint64_t kEvalSeedTag = 0x4556414Cull;       // "EVAL"

std::uint64_t hash_double(double x) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(x));
  std::memcpy(&bits, &x, sizeof(bits));
  return bits;
}

}  // namespace

void TrainConfig::validate() const {
  if (steps <= 0) throw PipelineError(ErrorCode::InvalidConfig, "steps must be positive");
  if (batch_size <= 0) throw PipelineError(ErrorCode::InvalidConfig, "batch_size must be positive");
  if (warmup_steps < 0 || warmup_steps > steps)
    throw PipelineError(ErrorCode::InvalidConfig, "warmup_steps must be in [0, steps]");
  if (eval_every <= 0) throw PipelineError(ErrorCode::InvalidConfig, "eval_every must be positive");
  if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0))
    throw PipelineError(ErrorCode::InvalidConfig, "rates must be non-negative");
}

std::uint64_t train_config_hash(const TrainConfig& c) {
  std::uint64_t h = splitmix64(static_cast<std::uint64_t>(c.steps));
  h = splitmix64(h ^ static_cast<std::uint64_t>(c.batch_size));
  h = splitmix64(h ^ hash_double(c.learning_rate));
  h = splitmix64(h ^ static_cast<std::uint64_t>(c.warmup_steps));
  h = splitmix64(h ^ hash_double(c.weight_decay));
  h = splitmix64(h ^ c.seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(c.eval_every));
  return h;
}

double scheduled_lr(const TrainConfig& config, std::int64_t step) {
  if (config.warmup_steps > 0 && step <= config.warmup_steps) {
    return config.learning_rate * static_cast<double>(step) /
           static_cast<double>(config.warmup_steps);
  }
  std::int64_t decay_span = config.steps - config.warmup_steps;
  if (decay_span <= 0) return config.learning_rate;
  return config.learning_rate * static_cast<double>(config.steps - step + 1) /
         static_cast<double>(decay_span);
}

AdamW::AdamW(ModelParams& params, double weight_decay, double beta1, double beta2, double epsilon)
    : params_(&params),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon) {
  for (const TensorRef& ref : params.tensor_refs()) {
    m_.emplace_back(ref.tensor->size(), 0.0);
    v_.emplace_back(ref.tensor->size(), 0.0);
  }
}

void AdamW::step(ModelParams& grads, double lr) {
  std::vector<TensorRef> prefs = params_->tensor_refs();
  std::vector<TensorRef> grefs = grads.tensor_refs();
  for (std::size_t t = 0; t < prefs.size(); ++t) {
    Tensor& p = *prefs[t].tensor;
    const Tensor& g = *grefs[t].tensor;
    std::vector<double>& m = m_[t];
    std::vector<double>& v = v_[t];
    const bool decay = prefs[t].weight_decay;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g.data[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g.data[i] * g.data[i];
      double update = m[i] / (std::sqrt(v[i]) + epsilon_);
      if (decay) update += weight_decay_ * p.data[i];
      p.data[i] -= lr * update;
    }
  }
}

CorpusInstanceStream::CorpusInstanceStream(const std::vector<Document>& corpus, BuildConfig config,
                                           const Vocab& vocab, const SynonymIndex* index)
    : corpus_(&corpus), config_(config), vocab_(&vocab), index_(index) {
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    if (d % 10 == 9)
      eval_docs_.push_back(d);
    else
      train_docs_.push_back(d);
  }
  if (eval_docs_.empty() && corpus.size() >= 2) {
    eval_docs_.push_back(train_docs_.back());
    train_docs_.pop_back();
  }
  if (train_docs_.empty()) train_docs_ = eval_docs_;

  BuildConfig eval_config = config_;
  eval_config.masking.seed = hash64(config_.masking.seed, kEvalSeedTag, 0);
  for (std::size_t d : eval_docs_) {
    for (TrainingInstance& inst : build_document_instances(corpus, d, eval_config, vocab, index))
      eval_.push_back(std::move(inst));
  }
  if (eval_.empty()) {
    for (std::size_t d : train_docs_) {
      for (TrainingInstance& inst :
           build_document_instances(corpus, d, eval_config, vocab, index))
        eval_.push_back(std::move(inst));
    }
  }
}

void CorpusInstanceStream::refill() {
  BuildConfig epoch_config = config_;
  epoch_config.masking.seed = hash64(config_.masking.seed, kEpochSeedTag, epoch_);
  pool_.clear();
  for (std::size_t d : train_docs_) {
    for (TrainingInstance& inst :
         build_document_instances(*corpus_, d, epoch_config, *vocab_, index_))
      pool_.push_back(std::move(inst));
  }
  if (pool_.empty())
    throw PipelineError(ErrorCode::InvalidConfig, "corpus yields no training instances");
  Pcg32 rng(hash64(config_.masking.seed, kShuffleSeedTag, epoch_));
  for (std::size_t i = pool_.size(); i > 1; --i) {
    std::size_t j = rng.bounded(static_cast<std::uint32_t>(i));
    std::swap(pool_[i - 1], pool_[j]);
  }
  cursor_ = 0;
  ++epoch_;
}

std::vector<TrainingInstance> CorpusInstanceStream::next_batch(std::int32_t n) {
  std::vector<TrainingInstance> batch;
  batch.reserve(static_cast<std::size_t>(n));
  while (batch.size() < static_cast<std::size_t>(n)) {
    if (cursor_ >= pool_.size()) refill();
    batch.push_back(pool_[cursor_++]);
  }
  return batch;
}

VectorInstanceStream::VectorInstanceStream(std::vector<TrainingInstance> instances) {
  if (instances.empty())
    throw PipelineError(ErrorCode::InvalidConfig, "no instances supplied");
  std::size_t eval_count = std::max<std::size_t>(1, instances.size() / 10);
  if (eval_count >= instances.size()) eval_count = instances.size() == 1 ? 0 : 1;
  std::size_t train_count = instances.size() - eval_count;
  train_.assign(instances.begin(), instances.begin() + static_cast<std::ptrdiff_t>(train_count));
  eval_.assign(instances.begin() + static_cast<std::ptrdiff_t>(train_count), instances.end());
  if (train_.empty()) train_ = instances;
  if (eval_.empty()) eval_ = train_;
}

std::vector<TrainingInstance> VectorInstanceStream::next_batch(std::int32_t n) {
  std::vector<TrainingInstance> batch;
  batch.reserve(static_cast<std::size_t>(n));
  for (std::int32_t i = 0; i < n; ++i) {
    batch.push_back(train_[cursor_]);
    cursor_ = (cursor_ + 1) % train_.size();
  }
  return batch;
}

EvalRecord evaluate_instances(const ModelParams& params, std::span<const TrainingInstance> insts,
                              const Vocab& vocab, std::int32_t batch_size, TaskWeights weights) {
  EvalRecord rec;
  double ce_sum = 0.0;
  std::size_t rows = 0, recovered = 0, pair_hits = 0, pair_total = 0;
  for (std::size_t from = 0; from < insts.size(); from += static_cast<std::size_t>(batch_size)) {
    std::size_t to = std::min(insts.size(), from + static_cast<std::size_t>(batch_size));
    Batch batch = Batch::from_instances(insts.subspan(from, to - from), vocab, params.config);
    ForwardOutput out = forward(params, batch);
    std::vector<double> ce = per_row_cross_entropy(out.mlm_logits, batch.mlm_labels);
    for (double c : ce) ce_sum += c;
    rows += ce.size();
    recovered += count_argmax_matches(out.mlm_logits, batch.mlm_labels);
    pair_hits += count_argmax_matches(out.pair_logits, batch.pair_labels);
    pair_total += batch.pair_labels.size();
  }
  (void)weights;
  rec.mlm_loss = rows > 0 ? ce_sum / static_cast<double>(rows) : 0.0;
  rec.recovery_acc = rows > 0 ? static_cast<double>(recovered) / static_cast<double>(rows) : 0.0;
  rec.pair_acc =
      pair_total > 0 ? static_cast<double>(pair_hits) / static_cast<double>(pair_total) : 0.0;
  return rec;
}

TrainResult train(ModelParams params, InstanceStream& stream, const TrainConfig& config,
                  const Vocab& vocab, TaskWeights weights) {
  config.validate();
  AdamW optimizer(params, config.weight_decay);
  RunReport report;
  report.config_hash = train_config_hash(config);

  for (std::int64_t step = 1; step <= config.steps; ++step) {
    std::vector<TrainingInstance> insts = stream.next_batch(config.batch_size);
    Batch batch = Batch::from_instances(insts, vocab, params.config);
    BackwardResult res = backward(params, batch, weights);
    if (!std::isfinite(res.loss_value))
      throw PipelineError(ErrorCode::DivergenceDetected,
                          "non-finite loss at step " + std::to_string(step));
    optimizer.step(res.grads, scheduled_lr(config, step));
    if (step % config.eval_every == 0) {
      EvalRecord rec = evaluate_instances(params, stream.eval_instances(), vocab,
                                          config.batch_size, weights);
      rec.step = step;
      report.records.push_back(rec);
    }
  }
  return {std::move(params), std::move(report)};
}

void write_report_csv(const RunReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError(ErrorCode::IoFailure, "cannot open for write: " + path);
  out << "step,strategy,mlm_loss,recovery_acc,pair_acc\n";
  char buf[160];
  for (const EvalRecord& rec : report.records) {
    std::snprintf(buf, sizeof(buf), "%lld,%s,%.6f,%.6f,%.6f\n",
                  static_cast<long long>(rec.step), report.strategy.c_str(), rec.mlm_loss,
                  rec.recovery_acc, rec.pair_acc);
    out << buf;
  }
  if (!out) throw PipelineError(ErrorCode::IoFailure, "write failed: " + path);
}

std::vector<RunReport> ablate_strategies(const std::vector<Document>& corpus,
                                         const std::vector<Strategy>& strategies,
                                         BuildConfig build, const ModelConfig& model_config,
                                         const TrainConfig& train_config, const Vocab& vocab,
                                         const SynonymIndex* index, const std::string& out_dir) {
  std::vector<RunReport> reports;
  for (Strategy strategy : strategies) {
    BuildConfig variant = build;
    variant.masking.strategy = strategy;
    CorpusInstanceStream stream(corpus, variant, vocab, index);
    ModelParams model = ModelParams::init(model_config, train_config.seed);
    TaskWeights weights;
    weights.pair = variant.pair.task == PairTask::kNone ? 0.0 : 1.0;
    TrainResult result = train(std::move(model), stream, train_config, vocab, weights);
    result.report.strategy = std::string(strategy_name(strategy));
    write_report_csv(result.report, out_dir + "/" + result.report.strategy + ".csv");
    reports.push_back(std::move(result.report));
  }
  return reports;
}

}  // namespace macpipe
