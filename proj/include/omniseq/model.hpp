#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "omniseq/domain.hpp"
#include "omniseq/rng.hpp"
#include "omniseq/tape.hpp"

namespace omniseq {

// How a special-token position is turned into an input vector. kNone means
// the sequence must not contain special tokens (online-only or flattened).
enum class EncoderKind : std::uint8_t { kNone, kAvgPool, kAttnPool };

std::string_view to_string(EncoderKind k);
EncoderKind parse_encoder_kind(std::string_view s);

struct ModelConfig {
  int dim = 64;
  int attn_dim = 0;  // encoder projection width; 0 means `dim`
  int blocks = 2;
  int heads = 1;
  int ffn_dim = 0;  // 0 means `dim`
  int max_seq_len = 90;
  double dropout = 0.2;
  double ln_epsilon = 1e-8;
  int catalog_size = 0;
  EncoderKind encoder = EncoderKind::kAttnPool;

  void validate() const;
  int encoder_dim() const { return attn_dim > 0 ? attn_dim : dim; }
  int inner_dim() const { return ffn_dim > 0 ? ffn_dim : dim; }
  Catalog catalog() const { return Catalog{catalog_size}; }
};

struct BlockParams {
  Parameter ln1_gain, ln1_bias;
  Parameter attn_query, attn_key, attn_value;
  Parameter ln2_gain, ln2_bias;
  Parameter ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct ModelParams {
  // (catalog + 1) x dim; the last row belongs to the special token and is
  // never read as input or scored.
  Parameter item_embedding;
  Parameter position_embedding;  // max_seq_len x dim
  std::vector<BlockParams> blocks;
  Parameter final_gain, final_bias;
  Parameter encoder_query, encoder_key;  // dim x attn_dim

  // Fixed order used by checkpoints and optimizers.
  std::vector<Parameter*> ordered();
  std::vector<const Parameter*> ordered() const;
};

// Embeddings and projections ~ U(-1/sqrt(dim), 1/sqrt(dim)); layer-norm gain
// 1, all biases 0.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

enum class Mode : std::uint8_t { kEval, kTrain };

// Self-attention set pooling. With m the member embeddings (rows in ascending
// item id), Q = m Wq, K = m Wk, scores a = softmax(Q K^T 1), output a^T m.
Var encode_set_attn(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                    std::span<const ItemId> items);
// Unweighted mean of the member embeddings.
Var encode_set_avg(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                   std::span<const ItemId> items);

// L x dim input: item (or encoded set) embedding plus position embedding,
// with dropout in training mode.
Var embed_sequence(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                   const HybridSequence& seq, Mode mode, Rng* rng);

// Causal pre-norm transformer stack with a final layer norm.
Var backbone_forward(Tape& tape, Var input, const ModelParams& params, const ModelConfig& cfg,
                     Mode mode, Rng* rng);

// Eager conveniences (eval mode).
std::vector<double> encode_set(const ModelParams& params, const ModelConfig& cfg,
                               std::span<const ItemId> items);
std::vector<double> set_attention_scores(const ModelParams& params, const ModelConfig& cfg,
                                         std::span<const ItemId> items);
Matrix hidden_states(const ModelParams& params, const ModelConfig& cfg, const HybridSequence& seq);

// logit_c = <hidden, embedding(c)>. The special token is not a valid candidate.
std::vector<double> score_candidates(std::span<const double> hidden,
                                     std::span<const ItemId> candidates,
                                     const ModelParams& params, const ModelConfig& cfg);

}  // namespace omniseq
