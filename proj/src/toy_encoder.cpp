#include "macpipe/toy_encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "macpipe/rng.hpp"

namespace macpipe {

namespace {

constexpr double kLnEps = 1e-12;
constexpr double kTwoPi = 6.283185307179586;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
  double phi = std::exp(-0.5 * x * x) / std::sqrt(kTwoPi);
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * phi;
}

double draw_normal(Pcg32& rng) {
  double u1 = (static_cast<double>(rng.next_u32()) + 1.0) * 0x1.0p-32;
  double u2 = static_cast<double>(rng.next_u32()) * 0x1.0p-32;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

double truncated_normal(Pcg32& rng, double stddev) {
  double x;
  do {
    x = draw_normal(rng);
  } while (std::abs(x) > 2.0);
  return x * stddev;
}

void fill_truncated_normal(Tensor& t, Pcg32& rng, double stddev) {
  for (double& x : t.data) x = truncated_normal(rng, stddev);
}

void fill_constant(Tensor& t, double value) {
  std::fill(t.data.begin(), t.data.end(), value);
}

// y[n x out] = x[n x in] * w[in x out] + b[1 x out]
void linear_forward(const double* x, std::size_t n, std::size_t in, const Tensor& w,
                    const Tensor& b, double* y) {
  const std::size_t out = static_cast<std::size_t>(w.cols);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < out; ++o) y[r * out + o] = b.data[o];
    for (std::size_t i = 0; i < in; ++i) {
      double xv = x[r * in + i];
      if (xv == 0.0) continue;
      const double* wrow = w.data.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) y[r * out + o] += xv * wrow[o];
    }
  }
}

// Accumulates dx, dw, db from dy.
void linear_backward(const double* x, const double* dy, std::size_t n, std::size_t in,
                     const Tensor& w, double* dx, Tensor& dw, Tensor& db) {
  const std::size_t out = static_cast<std::size_t>(w.cols);
  for (std::size_t r = 0; r < n; ++r) {
    const double* dyr = dy + r * out;
    const double* xr = x + r * in;
    for (std::size_t o = 0; o < out; ++o) db.data[o] += dyr[o];
    for (std::size_t i = 0; i < in; ++i) {
      const double* wrow = w.data.data() + i * out;
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        acc += dyr[o] * wrow[o];
        dw.data[i * out + o] += xr[i] * dyr[o];
      }
      dx[r * in + i] += acc;
    }
  }
}

struct LnCache {
  std::vector<double> xhat;
  std::vector<double> inv_std;
};

void layer_norm_forward(const double* x, std::size_t n, std::size_t h, const Tensor& gain,
                        const Tensor& bias, double* y, LnCache& cache) {
  cache.xhat.resize(n * h);
  cache.inv_std.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x + r * h;
    double mean = 0.0;
    for (std::size_t i = 0; i < h; ++i) mean += xr[i];
    mean /= static_cast<double>(h);
    double var = 0.0;
    for (std::size_t i = 0; i < h; ++i) {
      double d = xr[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(h);
    double inv = 1.0 / std::sqrt(var + kLnEps);
    cache.inv_std[r] = inv;
    for (std::size_t i = 0; i < h; ++i) {
      double xh = (xr[i] - mean) * inv;
      cache.xhat[r * h + i] = xh;
      y[r * h + i] = gain.data[i] * xh + bias.data[i];
    }
  }
}

void layer_norm_backward(const double* dy, std::size_t n, std::size_t h, const Tensor& gain,
                         const LnCache& cache, double* dx, Tensor& dgain, Tensor& dbias) {
  for (std::size_t r = 0; r < n; ++r) {
    const double* dyr = dy + r * h;
    const double* xh = cache.xhat.data() + r * h;
    double inv = cache.inv_std[r];
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < h; ++i) {
      double dxhat = dyr[i] * gain.data[i];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xh[i];
      dgain.data[i] += dyr[i] * xh[i];
      dbias.data[i] += dyr[i];
    }
    double mean_dxhat = sum_dxhat / static_cast<double>(h);
    double mean_dxhat_xhat = sum_dxhat_xhat / static_cast<double>(h);
    for (std::size_t i = 0; i < h; ++i) {
      double dxhat = dyr[i] * gain.data[i];
      dx[r * h + i] += inv * (dxhat - mean_dxhat - xh[i] * mean_dxhat_xhat);
    }
  }
}

struct LayerCache {
  std::vector<double> x_in;
  std::vector<double> q, k, v;
  std::vector<double> probs;  // B*nh*S*S
  std::vector<double> ctx;
  std::vector<double> attn_out;
  LnCache ln1;
  std::vector<double> x_mid;
  std::vector<double> ffn_pre;
  std::vector<double> ffn_act;
  LnCache ln2;
  std::vector<double> x_out;
};

struct Cache {
  std::vector<double> emb_sum;
  LnCache emb_ln;
  std::vector<double> x0;
  std::vector<LayerCache> layers;

  const std::vector<double>& final_hidden() const {
    return layers.empty() ? x0 : layers.back().x_out;
  }
};

void check(bool ok, const char* what) {
  if (!ok) throw PipelineError(ErrorCode::ShapeMismatch, what);
}

ForwardOutput run_forward(const ModelParams& params, const Batch& batch, Cache& cache,
                          ForwardProbe* probe) {
  const ModelConfig& cfg = params.config;
  cfg.validate();
  const std::size_t B = static_cast<std::size_t>(batch.batch_size);
  const std::size_t S = static_cast<std::size_t>(batch.seq_len);
  const std::size_t H = static_cast<std::size_t>(cfg.hidden);
  const std::size_t NH = static_cast<std::size_t>(cfg.heads);
  const std::size_t DH = static_cast<std::size_t>(cfg.head_dim());
  const std::size_t F = static_cast<std::size_t>(cfg.ffn);
  const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
  check(batch.seq_len <= cfg.max_len, "batch longer than model max_len");
  const double scale = 1.0 / std::sqrt(static_cast<double>(DH));

  // Embedding sum + norm.
  cache.emb_sum.assign(B * S * H, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s < S; ++s) {
      TokenId tok = batch.input_ids[b * S + s];
      TokenId seg = batch.segment_ids[b * S + s];
      check(tok >= 0 && static_cast<std::size_t>(tok) < V, "token id out of range");
      check(seg == 0 || seg == 1, "segment id out of range");
      double* dst = cache.emb_sum.data() + (b * S + s) * H;
      const double* te = params.tok_emb.data.data() + static_cast<std::size_t>(tok) * H;
      const double* se = params.seg_emb.data.data() + static_cast<std::size_t>(seg) * H;
      const double* pe = params.pos_emb.data.data() + s * H;
      for (std::size_t i = 0; i < H; ++i) dst[i] = te[i] + se[i] + pe[i];
    }
  }
  cache.x0.assign(B * S * H, 0.0);
  layer_norm_forward(cache.emb_sum.data(), B * S, H, params.emb_ln_g, params.emb_ln_b,
                     cache.x0.data(), cache.emb_ln);

  cache.layers.resize(static_cast<std::size_t>(cfg.layers));
  const std::vector<double>* x_prev = &cache.x0;
  for (std::size_t l = 0; l < static_cast<std::size_t>(cfg.layers); ++l) {
    LayerCache& lc = cache.layers[l];
    const EncoderLayerParams& lp = params.layers[l];
    lc.x_in = *x_prev;

    lc.q.assign(B * S * H, 0.0);
    lc.k.assign(B * S * H, 0.0);
    lc.v.assign(B * S * H, 0.0);
    linear_forward(lc.x_in.data(), B * S, H, lp.attn.wq, lp.attn.bq, lc.q.data());
    linear_forward(lc.x_in.data(), B * S, H, lp.attn.wk, lp.attn.bk, lc.k.data());
    linear_forward(lc.x_in.data(), B * S, H, lp.attn.wv, lp.attn.bv, lc.v.data());

    lc.probs.assign(B * NH * S * S, 0.0);
    lc.ctx.assign(B * S * H, 0.0);
    std::vector<double> scores(S);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < NH; ++h) {
        for (std::size_t i = 0; i < S; ++i) {
          double max_score = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < S; ++j) {
            if (!batch.valid[b * S + j]) continue;
            const double* qi = lc.q.data() + (b * S + i) * H + h * DH;
            const double* kj = lc.k.data() + (b * S + j) * H + h * DH;
            double dot = 0.0;
            for (std::size_t d = 0; d < DH; ++d) dot += qi[d] * kj[d];
            scores[j] = dot * scale;
            max_score = std::max(max_score, scores[j]);
          }
          double denom = 0.0;
          double* prow = lc.probs.data() + ((b * NH + h) * S + i) * S;
          for (std::size_t j = 0; j < S; ++j) {
            if (!batch.valid[b * S + j]) continue;
            prow[j] = std::exp(scores[j] - max_score);
            denom += prow[j];
          }
          double row_sum = 0.0;
          if (denom > 0.0) {
            for (std::size_t j = 0; j < S; ++j) {
              if (!batch.valid[b * S + j]) continue;
              prow[j] /= denom;
              row_sum += prow[j];
            }
          }
          if (probe != nullptr) probe->attention_row_sums.push_back(row_sum);
          double* ci = lc.ctx.data() + (b * S + i) * H + h * DH;
          for (std::size_t j = 0; j < S; ++j) {
            double p = prow[j];
            if (p == 0.0) continue;
            const double* vj = lc.v.data() + (b * S + j) * H + h * DH;
            for (std::size_t d = 0; d < DH; ++d) ci[d] += p * vj[d];
          }
        }
      }
    }

    lc.attn_out.assign(B * S * H, 0.0);
    linear_forward(lc.ctx.data(), B * S, H, lp.attn.wo, lp.attn.bo, lc.attn_out.data());

    std::vector<double> resid1(B * S * H);
    for (std::size_t i = 0; i < resid1.size(); ++i) resid1[i] = lc.x_in[i] + lc.attn_out[i];
    lc.x_mid.assign(B * S * H, 0.0);
    layer_norm_forward(resid1.data(), B * S, H, lp.ln1_g, lp.ln1_b, lc.x_mid.data(), lc.ln1);

    lc.ffn_pre.assign(B * S * F, 0.0);
    linear_forward(lc.x_mid.data(), B * S, H, lp.w1, lp.b1, lc.ffn_pre.data());
    lc.ffn_act.resize(B * S * F);
    for (std::size_t i = 0; i < lc.ffn_act.size(); ++i) lc.ffn_act[i] = gelu(lc.ffn_pre[i]);

    std::vector<double> ffn_out(B * S * H, 0.0);
    linear_forward(lc.ffn_act.data(), B * S, F, lp.w2, lp.b2, ffn_out.data());

    std::vector<double> resid2(B * S * H);
    for (std::size_t i = 0; i < resid2.size(); ++i) resid2[i] = lc.x_mid[i] + ffn_out[i];
    lc.x_out.assign(B * S * H, 0.0);
    layer_norm_forward(resid2.data(), B * S, H, lp.ln2_g, lp.ln2_b, lc.x_out.data(), lc.ln2);

    x_prev = &lc.x_out;
  }

  const std::vector<double>& hidden = cache.final_hidden();
  ForwardOutput out;
  const std::size_t M = batch.masked_rows();
  out.mlm_logits = Tensor(static_cast<std::int32_t>(M), cfg.vocab_size);
  for (std::size_t m = 0; m < M; ++m) {
    auto b = static_cast<std::size_t>(batch.mask_instance[m]);
    auto p = static_cast<std::size_t>(batch.mask_position[m]);
    check(b < B && p < S, "masked row out of range");
    const double* hr = hidden.data() + (b * S + p) * H;
    double* lr = out.mlm_logits.data.data() + m * V;
    for (std::size_t vtok = 0; vtok < V; ++vtok) {
      const double* emb = params.tok_emb.data.data() + vtok * H;
      double acc = params.mlm_bias.data[vtok];
      for (std::size_t i = 0; i < H; ++i) acc += hr[i] * emb[i];
      lr[vtok] = acc;
    }
  }

  out.pair_logits = Tensor(static_cast<std::int32_t>(B), 2);
  for (std::size_t b = 0; b < B; ++b) {
    const double* cls = hidden.data() + (b * S + 0) * H;
    for (std::size_t o = 0; o < 2; ++o) {
      double acc = params.pair_b.data[o];
      for (std::size_t i = 0; i < H; ++i) acc += cls[i] * params.pair_w.data[i * 2 + o];
      out.pair_logits.data[b * 2 + o] = acc;
    }
  }
  return out;
}

double row_log_sum_exp(const double* row, std::size_t n) {
  double mx = row[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::exp(row[i] - mx);
  return mx + std::log(acc);
}

// dlogits = (softmax - onehot) * scale, accumulated row by row.
void cross_entropy_backward(const Tensor& logits, std::span<const TokenId> labels, double scale,
                            Tensor& dlogits) {
  const auto n = static_cast<std::size_t>(logits.rows);
  const auto c = static_cast<std::size_t>(logits.cols);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = logits.data.data() + r * c;
    double lse = row_log_sum_exp(row, c);
    double* drow = dlogits.data.data() + r * c;
    for (std::size_t i = 0; i < c; ++i) drow[i] = std::exp(row[i] - lse) * scale;
    drow[static_cast<std::size_t>(labels[r])] -= scale;
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (layers < 0 || hidden <= 0 || heads <= 0 || ffn <= 0 || max_len <= 0)
    throw PipelineError(ErrorCode::InvalidConfig, "model dimensions must be positive");
  if (hidden % heads != 0)
    throw PipelineError(ErrorCode::InvalidConfig, "hidden must be divisible by heads");
  if (vocab_size <= 5)
    throw PipelineError(ErrorCode::InvalidConfig, "vocab_size must exceed the special tokens");
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  const std::int32_t H = config.hidden;
  p.tok_emb = Tensor(config.vocab_size, H);
  p.seg_emb = Tensor(2, H);
  p.pos_emb = Tensor(config.max_len, H);
  p.emb_ln_g = Tensor(1, H);
  p.emb_ln_b = Tensor(1, H);
  p.layers.resize(static_cast<std::size_t>(config.layers));
  for (EncoderLayerParams& l : p.layers) {
    l.attn.wq = Tensor(H, H);
    l.attn.bq = Tensor(1, H);
    l.attn.wk = Tensor(H, H);
    l.attn.bk = Tensor(1, H);
    l.attn.wv = Tensor(H, H);
    l.attn.bv = Tensor(1, H);
    l.attn.wo = Tensor(H, H);
    l.attn.bo = Tensor(1, H);
    l.ln1_g = Tensor(1, H);
    l.ln1_b = Tensor(1, H);
    l.w1 = Tensor(H, config.ffn);
    l.b1 = Tensor(1, config.ffn);
    l.w2 = Tensor(config.ffn, H);
    l.b2 = Tensor(1, H);
    l.ln2_g = Tensor(1, H);
    l.ln2_b = Tensor(1, H);
  }
  p.mlm_bias = Tensor(1, config.vocab_size);
  p.pair_w = Tensor(H, 2);
  p.pair_b = Tensor(1, 2);
  return p;
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zeros(config);
  Pcg32 rng(seed);
  constexpr double kStd = 0.02;
  fill_truncated_normal(p.tok_emb, rng, kStd);
  fill_truncated_normal(p.seg_emb, rng, kStd);
  fill_truncated_normal(p.pos_emb, rng, kStd);
  fill_constant(p.emb_ln_g, 1.0);
  for (EncoderLayerParams& l : p.layers) {
    fill_truncated_normal(l.attn.wq, rng, kStd);
    fill_truncated_normal(l.attn.wk, rng, kStd);
    fill_truncated_normal(l.attn.wv, rng, kStd);
    fill_truncated_normal(l.attn.wo, rng, kStd);
    fill_constant(l.ln1_g, 1.0);
    fill_truncated_normal(l.w1, rng, kStd);
    fill_truncated_normal(l.w2, rng, kStd);
    fill_constant(l.ln2_g, 1.0);
  }
  fill_truncated_normal(p.pair_w, rng, kStd);
  return p;
}

std::vector<TensorRef> ModelParams::tensor_refs() {
  std::vector<TensorRef> refs;
  refs.push_back({"tok_emb", &tok_emb, TensorClass::kEmbedding, true});
  refs.push_back({"seg_emb", &seg_emb, TensorClass::kEmbedding, true});
  refs.push_back({"pos_emb", &pos_emb, TensorClass::kEmbedding, true});
  refs.push_back({"emb_ln_g", &emb_ln_g, TensorClass::kNorm, false});
  refs.push_back({"emb_ln_b", &emb_ln_b, TensorClass::kNorm, false});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::string prefix = "layer" + std::to_string(l) + ".";
    EncoderLayerParams& lp = layers[l];
    refs.push_back({prefix + "wq", &lp.attn.wq, TensorClass::kAttention, true});
    refs.push_back({prefix + "bq", &lp.attn.bq, TensorClass::kAttention, false});
    refs.push_back({prefix + "wk", &lp.attn.wk, TensorClass::kAttention, true});
    refs.push_back({prefix + "bk", &lp.attn.bk, TensorClass::kAttention, false});
    refs.push_back({prefix + "wv", &lp.attn.wv, TensorClass::kAttention, true});
    refs.push_back({prefix + "bv", &lp.attn.bv, TensorClass::kAttention, false});
    refs.push_back({prefix + "wo", &lp.attn.wo, TensorClass::kAttention, true});
    refs.push_back({prefix + "bo", &lp.attn.bo, TensorClass::kAttention, false});
    refs.push_back({prefix + "ln1_g", &lp.ln1_g, TensorClass::kNorm, false});
    refs.push_back({prefix + "ln1_b", &lp.ln1_b, TensorClass::kNorm, false});
    refs.push_back({prefix + "w1", &lp.w1, TensorClass::kFfn, true});
    refs.push_back({prefix + "b1", &lp.b1, TensorClass::kFfn, false});
    refs.push_back({prefix + "w2", &lp.w2, TensorClass::kFfn, true});
    refs.push_back({prefix + "b2", &lp.b2, TensorClass::kFfn, false});
    refs.push_back({prefix + "ln2_g", &lp.ln2_g, TensorClass::kNorm, false});
    refs.push_back({prefix + "ln2_b", &lp.ln2_b, TensorClass::kNorm, false});
  }
  refs.push_back({"mlm_bias", &mlm_bias, TensorClass::kHead, false});
  refs.push_back({"pair_w", &pair_w, TensorClass::kHead, true});
  refs.push_back({"pair_b", &pair_b, TensorClass::kHead, false});
  return refs;
}

namespace {

void put_u32_le(std::ofstream& out, std::uint32_t x) {
  char b[4] = {static_cast<char>(x & 0xFF), static_cast<char>((x >> 8) & 0xFF),
               static_cast<char>((x >> 16) & 0xFF), static_cast<char>((x >> 24) & 0xFF)};
  out.write(b, 4);
}

std::uint32_t read_u32_le(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw PipelineError(ErrorCode::IoFailure, "truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

constexpr std::uint32_t kCheckpointMagic = 0x4D435031;  // "MCP1"

}  // namespace

void ModelParams::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError(ErrorCode::IoFailure, "cannot open for write: " + path);
  put_u32_le(out, kCheckpointMagic);
  for (std::int32_t x : {config.layers, config.hidden, config.heads, config.ffn, config.max_len,
                         config.vocab_size})
    put_u32_le(out, static_cast<std::uint32_t>(x));
  auto refs = const_cast<ModelParams*>(this)->tensor_refs();
  for (const TensorRef& ref : refs) {
    for (double d : ref.tensor->data) {
      auto bits = std::bit_cast<std::uint64_t>(d);
      put_u32_le(out, static_cast<std::uint32_t>(bits & 0xFFFFFFFFull));
      put_u32_le(out, static_cast<std::uint32_t>(bits >> 32));
    }
  }
  if (!out) throw PipelineError(ErrorCode::IoFailure, "write failed: " + path);
}

ModelParams ModelParams::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError(ErrorCode::IoFailure, "cannot open checkpoint: " + path);
  if (read_u32_le(in) != kCheckpointMagic)
    throw PipelineError(ErrorCode::IoFailure, "bad checkpoint magic");
  ModelConfig cfg;
  cfg.layers = static_cast<std::int32_t>(read_u32_le(in));
  cfg.hidden = static_cast<std::int32_t>(read_u32_le(in));
  cfg.heads = static_cast<std::int32_t>(read_u32_le(in));
  cfg.ffn = static_cast<std::int32_t>(read_u32_le(in));
  cfg.max_len = static_cast<std::int32_t>(read_u32_le(in));
  cfg.vocab_size = static_cast<std::int32_t>(read_u32_le(in));
  ModelParams p = zeros(cfg);
  for (const TensorRef& ref : p.tensor_refs()) {
    for (double& d : ref.tensor->data) {
      std::uint64_t lo = read_u32_le(in);
      std::uint64_t hi = read_u32_le(in);
      d = std::bit_cast<double>(lo | (hi << 32));
    }
  }
  return p;
}

Batch Batch::from_instances(std::span<const TrainingInstance> instances, const Vocab& vocab,
                            const ModelConfig& config) {
  check(!instances.empty(), "empty batch");
  Batch batch;
  batch.batch_size = static_cast<std::int32_t>(instances.size());
  std::size_t seq = 0;
  for (const TrainingInstance& inst : instances) seq = std::max(seq, inst.input_ids.size());
  check(seq > 0 && seq <= static_cast<std::size_t>(config.max_len),
        "instance length exceeds model max_len");
  batch.seq_len = static_cast<std::int32_t>(seq);
  batch.pad_id = vocab.pad_id();
  batch.input_ids.assign(instances.size() * seq, vocab.pad_id());
  batch.segment_ids.assign(instances.size() * seq, 0);
  batch.valid.assign(instances.size() * seq, 0);
  for (std::size_t b = 0; b < instances.size(); ++b) {
    const TrainingInstance& inst = instances[b];
    check(inst.segment_ids.size() == inst.input_ids.size(), "segment_ids length");
    check(inst.masked_positions.size() == inst.masked_label_ids.size(), "label alignment");
    for (std::size_t s = 0; s < inst.input_ids.size(); ++s) {
      TokenId id = inst.input_ids[s];
      check(id >= 0 && id < config.vocab_size, "token id outside model vocab");
      batch.input_ids[b * seq + s] = id;
      batch.segment_ids[b * seq + s] = inst.segment_ids[s];
      batch.valid[b * seq + s] = id == vocab.pad_id() ? 0 : 1;
    }
    for (std::size_t k = 0; k < inst.masked_positions.size(); ++k) {
      std::int32_t pos = inst.masked_positions[k];
      check(pos >= 0 && static_cast<std::size_t>(pos) < inst.input_ids.size(),
            "masked position out of range");
      batch.mask_instance.push_back(static_cast<std::int32_t>(b));
      batch.mask_position.push_back(pos);
      TokenId label = inst.masked_label_ids[k];
      check(label >= 0 && label < config.vocab_size, "masked label outside model vocab");
      batch.mlm_labels.push_back(label);
    }
    check(inst.pair_label == 0 || inst.pair_label == 1, "pair label range");
    batch.pair_labels.push_back(inst.pair_label);
  }
  return batch;
}

ForwardOutput forward(const ModelParams& params, const Batch& batch, ForwardProbe* probe) {
  Cache cache;
  return run_forward(params, batch, cache, probe);
}

double loss(const Tensor& mlm_logits, std::span<const TokenId> mlm_labels,
            const Tensor& pair_logits, std::span<const TokenId> pair_labels, TaskWeights weights) {
  check(static_cast<std::size_t>(mlm_logits.rows) == mlm_labels.size(), "mlm label count");
  check(static_cast<std::size_t>(pair_logits.rows) == pair_labels.size(), "pair label count");
  double total = 0.0;
  if (mlm_logits.rows > 0) {
    const auto v = static_cast<std::size_t>(mlm_logits.cols);
    double acc = 0.0;
    for (std::size_t r = 0; r < static_cast<std::size_t>(mlm_logits.rows); ++r) {
      const double* row = mlm_logits.data.data() + r * v;
      acc += row_log_sum_exp(row, v) - row[static_cast<std::size_t>(mlm_labels[r])];
    }
    total += weights.mlm * acc / static_cast<double>(mlm_logits.rows);
  }
  if (pair_logits.rows > 0) {
    double acc = 0.0;
    for (std::size_t r = 0; r < static_cast<std::size_t>(pair_logits.rows); ++r) {
      const double* row = pair_logits.data.data() + r * 2;
      acc += row_log_sum_exp(row, 2) - row[static_cast<std::size_t>(pair_labels[r])];
    }
    total += weights.pair * acc / static_cast<double>(pair_logits.rows);
  }
  return total;
}

std::vector<double> per_row_cross_entropy(const Tensor& logits, std::span<const TokenId> labels) {
  check(static_cast<std::size_t>(logits.rows) == labels.size(), "label count");
  std::vector<double> out(labels.size());
  const auto c = static_cast<std::size_t>(logits.cols);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const double* row = logits.data.data() + r * c;
    out[r] = row_log_sum_exp(row, c) - row[static_cast<std::size_t>(labels[r])];
  }
  return out;
}

std::size_t count_argmax_matches(const Tensor& logits, std::span<const TokenId> labels) {
  check(static_cast<std::size_t>(logits.rows) == labels.size(), "label count");
  const auto c = static_cast<std::size_t>(logits.cols);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const double* row = logits.data.data() + r * c;
    std::size_t best = 0;
    for (std::size_t i = 1; i < c; ++i) {
      if (row[i] > row[best]) best = i;
    }
    if (best == static_cast<std::size_t>(labels[r])) ++hits;
  }
  return hits;
}

BackwardResult backward(const ModelParams& params, const Batch& batch, TaskWeights weights) {
  Cache cache;
  BackwardResult result;
  result.output = run_forward(params, batch, cache, nullptr);
  result.loss_value = loss(result.output.mlm_logits, batch.mlm_labels, result.output.pair_logits,
                           batch.pair_labels, weights);
  result.grads = ModelParams::zeros(params.config);
  ModelParams& g = result.grads;

  const ModelConfig& cfg = params.config;
  const std::size_t B = static_cast<std::size_t>(batch.batch_size);
  const std::size_t S = static_cast<std::size_t>(batch.seq_len);
  const std::size_t H = static_cast<std::size_t>(cfg.hidden);
  const std::size_t NH = static_cast<std::size_t>(cfg.heads);
  const std::size_t DH = static_cast<std::size_t>(cfg.head_dim());
  const std::size_t F = static_cast<std::size_t>(cfg.ffn);
  const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
  const double scale = 1.0 / std::sqrt(static_cast<double>(DH));
  const std::size_t M = batch.masked_rows();

  // Loss -> logits.
  Tensor dmlm(static_cast<std::int32_t>(M), cfg.vocab_size);
  if (M > 0)
    cross_entropy_backward(result.output.mlm_logits, batch.mlm_labels,
                           weights.mlm / static_cast<double>(M), dmlm);
  Tensor dpair(static_cast<std::int32_t>(B), 2);
  cross_entropy_backward(result.output.pair_logits, batch.pair_labels,
                         weights.pair / static_cast<double>(B), dpair);

  // Heads -> final hidden state.
  const std::vector<double>& hidden = cache.final_hidden();
  std::vector<double> dhidden(B * S * H, 0.0);
  for (std::size_t m = 0; m < M; ++m) {
    auto b = static_cast<std::size_t>(batch.mask_instance[m]);
    auto p = static_cast<std::size_t>(batch.mask_position[m]);
    const double* drow = dmlm.data.data() + m * V;
    const double* hrow = hidden.data() + (b * S + p) * H;
    double* dh = dhidden.data() + (b * S + p) * H;
    for (std::size_t vtok = 0; vtok < V; ++vtok) {
      double dv = drow[vtok];
      if (dv == 0.0) continue;
      g.mlm_bias.data[vtok] += dv;
      const double* emb = params.tok_emb.data.data() + vtok * H;
      double* demb = g.tok_emb.data.data() + vtok * H;
      for (std::size_t i = 0; i < H; ++i) {
        dh[i] += dv * emb[i];
        demb[i] += dv * hrow[i];
      }
    }
  }
  for (std::size_t b = 0; b < B; ++b) {
    const double* cls = hidden.data() + (b * S + 0) * H;
    double* dcls = dhidden.data() + (b * S + 0) * H;
    for (std::size_t o = 0; o < 2; ++o) {
      double dv = dpair.data[b * 2 + o];
      g.pair_b.data[o] += dv;
      for (std::size_t i = 0; i < H; ++i) {
        g.pair_w.data[i * 2 + o] += dv * cls[i];
        dcls[i] += dv * params.pair_w.data[i * 2 + o];
      }
    }
  }

  // Layer stack in reverse.
  std::vector<double> dx = std::move(dhidden);
  for (std::size_t li = cache.layers.size(); li-- > 0;) {
    const LayerCache& lc = cache.layers[li];
    const EncoderLayerParams& lp = params.layers[li];
    EncoderLayerParams& gl = g.layers[li];

    // ln2 over resid2 = x_mid + ffn_out.
    std::vector<double> dresid2(B * S * H, 0.0);
    layer_norm_backward(dx.data(), B * S, H, lp.ln2_g, lc.ln2, dresid2.data(), gl.ln2_g,
                        gl.ln2_b);

    // ffn branch.
    std::vector<double> dffn_act(B * S * F, 0.0);
    std::vector<double> dx_mid(B * S * H, 0.0);
    linear_backward(lc.ffn_act.data(), dresid2.data(), B * S, F, lp.w2, dffn_act.data(), gl.w2,
                    gl.b2);
    std::vector<double> dffn_pre(B * S * F);
    for (std::size_t i = 0; i < dffn_pre.size(); ++i)
      dffn_pre[i] = dffn_act[i] * gelu_grad(lc.ffn_pre[i]);
    linear_backward(lc.x_mid.data(), dffn_pre.data(), B * S, H, lp.w1, dx_mid.data(), gl.w1,
                    gl.b1);
    // Residual path into x_mid.
    for (std::size_t i = 0; i < dx_mid.size(); ++i) dx_mid[i] += dresid2[i];

    // ln1 over resid1 = x_in + attn_out.
    std::vector<double> dresid1(B * S * H, 0.0);
    layer_norm_backward(dx_mid.data(), B * S, H, lp.ln1_g, lc.ln1, dresid1.data(), gl.ln1_g,
                        gl.ln1_b);

    // Output projection of attention.
    std::vector<double> dctx(B * S * H, 0.0);
    std::vector<double> dx_in(B * S * H, 0.0);
    linear_backward(lc.ctx.data(), dresid1.data(), B * S, H, lp.attn.wo, dctx.data(), gl.attn.wo,
                    gl.attn.bo);

    // Attention core.
    std::vector<double> dq(B * S * H, 0.0), dk(B * S * H, 0.0), dv(B * S * H, 0.0);
    std::vector<double> dp(S), ds(S);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < NH; ++h) {
        for (std::size_t i = 0; i < S; ++i) {
          const double* prow = lc.probs.data() + ((b * NH + h) * S + i) * S;
          const double* dci = dctx.data() + (b * S + i) * H + h * DH;
          double dot_pp = 0.0;
          for (std::size_t j = 0; j < S; ++j) {
            if (prow[j] == 0.0) {
              dp[j] = 0.0;
              continue;
            }
            const double* vj = lc.v.data() + (b * S + j) * H + h * DH;
            double acc = 0.0;
            for (std::size_t d = 0; d < DH; ++d) acc += dci[d] * vj[d];
            dp[j] = acc;
            dot_pp += prow[j] * acc;
            double* dvj = dv.data() + (b * S + j) * H + h * DH;
            for (std::size_t d = 0; d < DH; ++d) dvj[d] += prow[j] * dci[d];
          }
          const double* qi = lc.q.data() + (b * S + i) * H + h * DH;
          double* dqi = dq.data() + (b * S + i) * H + h * DH;
          for (std::size_t j = 0; j < S; ++j) {
            if (prow[j] == 0.0) continue;
            ds[j] = prow[j] * (dp[j] - dot_pp);
            const double* kj = lc.k.data() + (b * S + j) * H + h * DH;
            double* dkj = dk.data() + (b * S + j) * H + h * DH;
            double w = ds[j] * scale;
            for (std::size_t d = 0; d < DH; ++d) {
              dqi[d] += w * kj[d];
              dkj[d] += w * qi[d];
            }
          }
        }
      }
    }

    linear_backward(lc.x_in.data(), dq.data(), B * S, H, lp.attn.wq, dx_in.data(), gl.attn.wq,
                    gl.attn.bq);
    linear_backward(lc.x_in.data(), dk.data(), B * S, H, lp.attn.wk, dx_in.data(), gl.attn.wk,
                    gl.attn.bk);
    linear_backward(lc.x_in.data(), dv.data(), B * S, H, lp.attn.wv, dx_in.data(), gl.attn.wv,
                    gl.attn.bv);
    // Residual path into x_in.
    for (std::size_t i = 0; i < dx_in.size(); ++i) dx_in[i] += dresid1[i];

    dx = std::move(dx_in);
  }

  // Embedding norm and lookups.
  std::vector<double> demb_sum(B * S * H, 0.0);
  layer_norm_backward(dx.data(), B * S, H, params.emb_ln_g, cache.emb_ln, demb_sum.data(),
                      g.emb_ln_g, g.emb_ln_b);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s < S; ++s) {
      TokenId tok = batch.input_ids[b * S + s];
      TokenId seg = batch.segment_ids[b * S + s];
      const double* src = demb_sum.data() + (b * S + s) * H;
      double* dte = g.tok_emb.data.data() + static_cast<std::size_t>(tok) * H;
      double* dse = g.seg_emb.data.data() + static_cast<std::size_t>(seg) * H;
      double* dpe = g.pos_emb.data.data() + s * H;
      for (std::size_t i = 0; i < H; ++i) {
        dte[i] += src[i];
        dse[i] += src[i];
        dpe[i] += src[i];
      }
    }
  }
  return result;
}

}  // namespace macpipe
