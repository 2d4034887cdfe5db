#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "macpipe/corpus_io.hpp"

namespace macpipe {

struct ModelConfig {
  std::int32_t layers = 2;
  std::int32_t hidden = 64;
  std::int32_t heads = 2;
  std::int32_t ffn = 256;
  std::int32_t max_len = 128;
  std::int32_t vocab_size = 0;

  void validate() const;  // throws InvalidConfig
  std::int32_t head_dim() const { return hidden / heads; }
};

// Row-major dense matrix of doubles. Vectors are 1 x n.
struct Tensor {
  std::int32_t rows = 0;
  std::int32_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::int32_t r, std::int32_t c)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0) {}

  double& at(std::int32_t r, std::int32_t c) {
    return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) +
                static_cast<std::size_t>(c)];
  }
  double at(std::int32_t r, std::int32_t c) const {
    return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) +
                static_cast<std::size_t>(c)];
  }
  std::size_t size() const { return data.size(); }
};

enum class TensorClass { kEmbedding, kAttention, kFfn, kNorm, kHead };

struct TensorRef {
  std::string name;
  Tensor* tensor;
  TensorClass cls;
  bool weight_decay;  // false for biases and norm parameters
};

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncoderLayerParams {
  AttentionParams attn;
  Tensor ln1_g, ln1_b;
  Tensor w1, b1, w2, b2;
  Tensor ln2_g, ln2_b;
};

// Token/segment/position embeddings, post-norm transformer stack, MLM head
// tied to the token embedding, pair head over the CLS vector.
struct ModelParams {
  ModelConfig config;
  Tensor tok_emb, seg_emb, pos_emb;
  Tensor emb_ln_g, emb_ln_b;
  std::vector<EncoderLayerParams> layers;
  Tensor mlm_bias;
  Tensor pair_w, pair_b;

  // The MLM output projection is the token embedding itself (tied weights).
  const Tensor& mlm_projection() const { return tok_emb; }

  static ModelParams zeros(const ModelConfig& config);
  // Truncated normal (std 0.02, clipped at 2 std) for weights, ones for norm
  // gains, zeros for biases.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  std::vector<TensorRef> tensor_refs();

  void save(const std::string& path) const;
  static ModelParams load(const std::string& path);
};

// Fixed-shape batch view over TrainingInstances, padded to a common length.
struct Batch {
  std::int32_t batch_size = 0;
  std::int32_t seq_len = 0;
  TokenId pad_id = 0;
  std::vector<TokenId> input_ids;     // batch_size * seq_len
  std::vector<TokenId> segment_ids;   // batch_size * seq_len
  std::vector<char> valid;            // 1 where not PAD
  std::vector<std::int32_t> mask_instance;  // per masked row
  std::vector<std::int32_t> mask_position;  // per masked row
  std::vector<TokenId> mlm_labels;          // per masked row
  std::vector<TokenId> pair_labels;         // per instance

  std::size_t masked_rows() const { return mlm_labels.size(); }

  static Batch from_instances(std::span<const TrainingInstance> instances, const Vocab& vocab,
                              const ModelConfig& config);
};

struct ForwardOutput {
  Tensor mlm_logits;   // masked_rows x vocab_size
  Tensor pair_logits;  // batch_size x 2
};

// Optional inspection data filled during forward.
struct ForwardProbe {
  // One entry per (layer, instance, head, query position), softmax row sum
  // over the non-PAD keys.
  std::vector<double> attention_row_sums;
};

ForwardOutput forward(const ModelParams& params, const Batch& batch,
                      ForwardProbe* probe = nullptr);

struct TaskWeights {
  double mlm = 1.0;
  double pair = 1.0;
};

// Mean masked-token cross-entropy plus weighted pair cross-entropy. An empty
// mask set contributes zero and leaves only the pair term.
double loss(const Tensor& mlm_logits, std::span<const TokenId> mlm_labels,
            const Tensor& pair_logits, std::span<const TokenId> pair_labels, TaskWeights weights);

std::vector<double> per_row_cross_entropy(const Tensor& logits, std::span<const TokenId> labels);
std::size_t count_argmax_matches(const Tensor& logits, std::span<const TokenId> labels);

struct BackwardResult {
  ModelParams grads;
  double loss_value = 0.0;
  ForwardOutput output;
};

BackwardResult backward(const ModelParams& params, const Batch& batch, TaskWeights weights);

}  // namespace macpipe
