#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctl/ablation.hpp"
#include "ctl/fusion.hpp"
#include "ctl/nn.hpp"
#include "ctl/rng.hpp"
#include "ctl/tensor.hpp"
#include "ctl/tokenizer.hpp"

namespace ctl {

inline constexpr double kSelectRatio = 0.3;

struct GeneratorConfig {
  std::size_t n_nodes = 8;
  std::size_t features = 12;  // F: per-node traffic features (t*C)
  std::size_t dim = 32;
  std::size_t heads = 2;
  std::size_t vocab = 8;
  std::size_t layers = 2;
  std::size_t detector_hidden = 16;
  std::size_t lora_rank = 12;
  double lora_alpha = 24.0;
  double lora_dropout = 0.1;
  std::size_t memory_slots = 16;
  double select_ratio = kSelectRatio;

  double lora_scale() const { return lora_alpha / static_cast<double>(lora_rank); }
  void validate() const;  // throws ConfigError
};

struct DecoderLayerParams {
  Tensor wq, wk, wv, wo;  // [D,D]
  Tensor aq, av;          // [r,D]
  Tensor bq, bv;          // [D,r]
  Tensor ln_gain, ln_bias;

  void collect(ParamList& out, const std::string& prefix);
};

struct GeneratorParams {
  Tensor det_w1, det_b1, det_w2, det_b2;  // [F,H] [H] [H,1] [1]
  Tensor in_w, in_b;                      // [F,D] [D]
  Tensor node_embed;                      // [N,D]
  Tensor gcn_w, gcn_b;                    // [D,D] [D]
  Tensor ctx_w;                           // [D,D]
  Tensor tok_embed;                       // [V,D]
  std::vector<DecoderLayerParams> layers;
  nn::MhaWeights xattn;
  Tensor gate_w, gate_b;          // [2D,D] [D]
  Tensor mem_keys, mem_values;    // [M,D]
  Tensor mem_wq, mem_wo;          // [D,D]
  Tensor lm_w, lm_b;              // [D,V] [V]

  static GeneratorParams zeros(const GeneratorConfig& cfg);
  static GeneratorParams init(const GeneratorConfig& cfg, RngState& rng);
  void collect(ParamList& out, const std::string& prefix);
};

// ceil(ratio * n) clamped to [1, n]
std::size_t selection_count(std::size_t n, double ratio = kSelectRatio);

namespace generator {

// Traffic side of one sample: importance scores, selection, key/value rows and
// the pooled context added to every token embedding.
struct ConditionCache {
  nn::Buffer x;          // [N,F]
  nn::Buffer det_pre;    // [N,H]
  nn::Buffer det_h;      // [N,H]
  nn::Buffer scores;     // [N]
  std::vector<std::size_t> selected;
  nn::Buffer feat_pre;   // [N,D]
  nn::Buffer feat;       // [N,D] after relu
  nn::Buffer a;          // [N,N] adjacency used by the GCN
  nn::Buffer gcn_out;    // [N,D]
  fusion::GcnCache gcn;
  nn::Buffer kv;         // [K,D]
  nn::Buffer ctx;        // [D] pooled
  nn::Buffer ctx_proj;   // [D]
};

void condition_forward(const GeneratorConfig& cfg, const GeneratorParams& p, const AblationFlags& flags,
                       const double* x, const double* a_mix, const std::vector<std::size_t>* fixed_selection,
                       ConditionCache& cache);
// dkv [K,D], dctx_proj [D]. da (optional) receives dL/dA_mix, dx (optional) dL/dx.
void condition_backward(const GeneratorConfig& cfg, const GeneratorParams& p, const AblationFlags& flags,
                        const ConditionCache& cache, const double* dkv, const double* dctx_proj, double* da,
                        double* dx, GeneratorParams& grad);

struct LayerCache {
  nn::Buffer input;
  nn::LoraCache lq, lv;
  nn::Buffer q, k, v, probs, ctx, z;
  nn::LayerNormCache ln;
};

struct DecoderCache {
  std::vector<TokenId> tokens;
  nn::Buffer embed;  // [S,D]
  std::vector<LayerCache> layers;
  nn::Buffer h_text;     // [S,D] decoder states entering the cross-attention
  nn::MhaCache xattn;
  nn::Buffer h_mod;      // [S,D]
  nn::Buffer gate_in;    // [S,2D]
  nn::Buffer gate;       // [S,D]
  nn::Buffer h_fusion;   // [S,D]
  nn::Buffer mem_q, mem_probs, mem_ctx;
  nn::Buffer h_final;    // [S,D]
};

// rng, when given, draws LoRA dropout masks (training mode).
void decoder_forward(const GeneratorConfig& cfg, const GeneratorParams& p, const AblationFlags& flags,
                     const ConditionCache& cond, const TokenId* tokens, std::size_t s, RngState* rng,
                     double* logits, DecoderCache& cache);
void decoder_backward(const GeneratorConfig& cfg, const GeneratorParams& p, const AblationFlags& flags,
                      const ConditionCache& cond, const DecoderCache& cache, const double* dlogits, double* dkv,
                      double* dctx_proj, GeneratorParams& grad, bool freeze_base = false);

// Sum of -log p(target) over non-PAD targets; writes d(sum)/dlogits when asked.
double token_cross_entropy(const double* logits, const TokenId* targets, std::size_t s, std::size_t v,
                           double* dlogits, std::size_t* count);

}  // namespace generator

// ---- batch and inference forms ----

struct ImportanceScores {
  Tensor scores;                                   // [B,T,N,1]
  std::vector<std::vector<std::size_t>> selected;  // per (b,t), ascending
};

// x_traffic [B,T,N,F]
ImportanceScores road_importance(const Tensor& x_traffic, const GeneratorConfig& cfg, const GeneratorParams& p);

// h_text [B,T,L,D] queries, node_feats [B,T,N,D] projected traffic features.
// Keys/values are score-weighted selected nodes; returns h_text + G * h_mod.
Tensor road_cross_attention(const Tensor& h_text, const Tensor& node_feats, const ImportanceScores& importance,
                            const GeneratorConfig& cfg, const GeneratorParams& p);

// h [B,T,L,D] -> h + attention over the memory slots.
Tensor memory_read(const Tensor& h, const GeneratorConfig& cfg, const GeneratorParams& p);

struct LoraAdapter {
  Tensor a;  // [r,in]
  Tensor b;  // [out,r]
  double alpha = 24.0;
  double dropout = 0.0;
};

// y = x w + (alpha/r) (x a^T) b^T with w [in,out]. Throws ConfigError when
// r > min(in,out). Dropout on x a^T is applied only when rng is given.
Tensor lora_apply(const Tensor& w, const LoraAdapter& adapter, const Tensor& x, RngState* rng = nullptr);

// Conditioned generator ready for token-level queries.
class TextGenerator {
 public:
  TextGenerator(const GeneratorConfig& cfg, const GeneratorParams& p, const AblationFlags& flags,
                const Tensor& traffic /*[N,F]*/, const Tensor& a_mix /*[N,N]*/);

  // Next-token distribution after the given prefix.
  std::vector<double> step(const std::vector<TokenId>& prefix) const;
  // Starts from BOS, appends argmax until EOS or max_len tokens; padded to max_len.
  TokenSequence greedy_decode(std::size_t max_len) const;
  const std::vector<std::size_t>& selected() const { return cond_.selected; }
  const nn::Buffer& scores() const { return cond_.scores; }

 private:
  const GeneratorConfig& cfg_;
  const GeneratorParams& p_;
  AblationFlags flags_;
  generator::ConditionCache cond_;
};

std::vector<double> lm_step(const std::vector<TokenId>& tokens_so_far, const TextGenerator& gen);
TokenSequence greedy_decode(const TextGenerator& gen, std::size_t max_len);

}  // namespace ctl
