#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "macpipe/instance_builder.hpp"
#include "macpipe/toy_encoder.hpp"

namespace macpipe {

struct TrainConfig {
  std::int64_t steps = 100;
  std::int32_t batch_size = 16;
  double learning_rate = 1e-3;
  std::int64_t warmup_steps = 10;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 10;

  void validate() const;  // throws InvalidConfig
};

struct EvalRecord {
  std::int64_t step = 0;
  double mlm_loss = 0.0;
  double pair_acc = 0.0;
  double recovery_acc = 0.0;
};

struct RunReport {
  std::string strategy;
  std::uint64_t config_hash = 0;
  std::vector<EvalRecord> records;
};

std::uint64_t train_config_hash(const TrainConfig& config);

// Linear warmup to learning_rate, then linear decay; step is 1-based.
double scheduled_lr(const TrainConfig& config, std::int64_t step);

// BERT-style Adam with decoupled weight decay: no bias correction, decay
// applied only to weight matrices (not biases or norm parameters).
class AdamW {
 public:
  AdamW(ModelParams& params, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double epsilon = 1e-6);
  void step(ModelParams& grads, double lr);

 private:
  ModelParams* params_;
  double weight_decay_, beta1_, beta2_, epsilon_;
  std::vector<std::vector<double>> m_, v_;
};

class InstanceStream {
 public:
  virtual ~InstanceStream() = default;
  virtual std::vector<TrainingInstance> next_batch(std::int32_t n) = 0;
  virtual const std::vector<TrainingInstance>& eval_instances() const = 0;
};

// Deterministic corpus-backed stream. Documents with index % 10 == 9 form
// the held-out eval split (the last document when the corpus is smaller than
// ten); every epoch re-masks the training documents under a fresh derived
// seed and reshuffles the pool.
class CorpusInstanceStream : public InstanceStream {
 public:
  CorpusInstanceStream(const std::vector<Document>& corpus, BuildConfig config, const Vocab& vocab,
                       const SynonymIndex* index);

  std::vector<TrainingInstance> next_batch(std::int32_t n) override;
  const std::vector<TrainingInstance>& eval_instances() const override { return eval_; }

  const std::vector<std::size_t>& train_doc_ids() const { return train_docs_; }
  const std::vector<std::size_t>& eval_doc_ids() const { return eval_docs_; }

 private:
  void refill();

  const std::vector<Document>* corpus_;
  BuildConfig config_;
  const Vocab* vocab_;
  const SynonymIndex* index_;
  std::vector<std::size_t> train_docs_, eval_docs_;
  std::vector<TrainingInstance> eval_;
  std::vector<TrainingInstance> pool_;
  std::size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
};

// Serves pre-built instances in order, cycling; the tail tenth is held out
// for eval.
class VectorInstanceStream : public InstanceStream {
 public:
  explicit VectorInstanceStream(std::vector<TrainingInstance> instances);
  std::vector<TrainingInstance> next_batch(std::int32_t n) override;
  const std::vector<TrainingInstance>& eval_instances() const override { return eval_; }

 private:
  std::vector<TrainingInstance> train_, eval_;
  std::size_t cursor_ = 0;
};

struct TrainResult {
  ModelParams params;
  RunReport report;
};

// Runs the optimization loop; records eval metrics every eval_every steps.
// Throws DivergenceDetected when the loss stops being finite.
TrainResult train(ModelParams params, InstanceStream& stream, const TrainConfig& config,
                  const Vocab& vocab, TaskWeights weights);

EvalRecord evaluate_instances(const ModelParams& params, std::span<const TrainingInstance> insts,
                              const Vocab& vocab, std::int32_t batch_size, TaskWeights weights);

void write_report_csv(const RunReport& report, const std::string& path);

// Trains one model per strategy over identical data order and seeds and
// writes <strategy>.csv files under out_dir.
std::vector<RunReport> ablate_strategies(const std::vector<Document>& corpus,
                                         const std::vector<Strategy>& strategies,
                                         BuildConfig build, const ModelConfig& model_config,
                                         const TrainConfig& train_config, const Vocab& vocab,
                                         const SynonymIndex* index, const std::string& out_dir);

}  // namespace macpipe
