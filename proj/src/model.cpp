#include "omniseq/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace omniseq {

std::string_view to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::kNone: return "none";
    case EncoderKind::kAvgPool: return "avg";
    case EncoderKind::kAttnPool: return "attn";
  }
  return "none";
}

EncoderKind parse_encoder_kind(std::string_view s) {
  if (s == "none") return EncoderKind::kNone;
  if (s == "avg") return EncoderKind::kAvgPool;
  if (s == "attn") return EncoderKind::kAttnPool;
  throw ConfigError("unknown encoder kind '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  if (dim < 1 || blocks < 1 || heads < 1 || max_seq_len < 1 || attn_dim < 0 || ffn_dim < 0) {
    throw ConfigError("model dimensions, blocks, heads and max_seq_len must be positive");
  }
  if (dim % heads != 0) throw ConfigError("dim must be divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (catalog_size < 1) throw ConfigError("catalog size must be positive");
  if (!(ln_epsilon > 0.0)) throw ConfigError("layer-norm epsilon must be positive");
}

std::vector<Parameter*> ModelParams::ordered() {
  std::vector<Parameter*> out{&item_embedding, &position_embedding};
  for (auto& b : blocks) {
    for (Parameter* p : {&b.ln1_gain, &b.ln1_bias, &b.attn_query, &b.attn_key, &b.attn_value,
                         &b.ln2_gain, &b.ln2_bias, &b.ffn_w1, &b.ffn_b1, &b.ffn_w2, &b.ffn_b2}) {
      out.push_back(p);
    }
  }
  for (Parameter* p : {&final_gain, &final_bias, &encoder_query, &encoder_key}) out.push_back(p);
  return out;
}

std::vector<const Parameter*> ModelParams::ordered() const {
  auto mut = const_cast<ModelParams*>(this)->ordered();
  return {mut.begin(), mut.end()};
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.dim);
  const auto da = static_cast<std::size_t>(cfg.encoder_dim());
  const auto ff = static_cast<std::size_t>(cfg.inner_dim());
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
  std::uniform_real_distribution<double> unif(-bound, bound);
  auto uniform = [&](std::string name, std::size_t r, std::size_t c) {
    Parameter p{std::move(name), Matrix(r, c)};
    for (double& v : p.value.values()) v = unif(rng);
    return p;
  };
  auto constant = [](std::string name, std::size_t c, double v) {
    return Parameter{std::move(name), Matrix(1, c, v)};
  };

  ModelParams p;
  p.item_embedding =
      uniform("item_embedding", static_cast<std::size_t>(cfg.catalog_size) + 1, d);
  p.position_embedding =
      uniform("position_embedding", static_cast<std::size_t>(cfg.max_seq_len), d);
  for (int i = 0; i < cfg.blocks; ++i) {
    const std::string pre = "block" + std::to_string(i) + ".";
    BlockParams b;
    b.ln1_gain = constant(pre + "ln1_gain", d, 1.0);
    b.ln1_bias = constant(pre + "ln1_bias", d, 0.0);
    b.attn_query = uniform(pre + "attn_query", d, d);
    b.attn_key = uniform(pre + "attn_key", d, d);
    b.attn_value = uniform(pre + "attn_value", d, d);
    b.ln2_gain = constant(pre + "ln2_gain", d, 1.0);
    b.ln2_bias = constant(pre + "ln2_bias", d, 0.0);
    b.ffn_w1 = uniform(pre + "ffn_w1", d, ff);
    b.ffn_b1 = constant(pre + "ffn_b1", ff, 0.0);
    b.ffn_w2 = uniform(pre + "ffn_w2", ff, d);
    b.ffn_b2 = constant(pre + "ffn_b2", d, 0.0);
    p.blocks.push_back(std::move(b));
  }
  p.final_gain = constant("final_gain", d, 1.0);
  p.final_bias = constant("final_bias", d, 0.0);
  p.encoder_query = uniform("encoder_query", d, da);
  p.encoder_key = uniform("encoder_key", d, da);
  return p;
}

namespace {

std::vector<ItemId> checked_members(std::span<const ItemId> items, const ModelConfig& cfg) {
  if (items.empty()) throw DataError("cannot encode an empty item set");
  std::vector<ItemId> sorted(items.begin(), items.end());
  std::sort(sorted.begin(), sorted.end());
  for (ItemId id : sorted) {
    if (!cfg.catalog().contains(id)) {
      throw DataError("unknown item id " + std::to_string(id) + " in item set");
    }
  }
  return sorted;
}

Var maybe_dropout(Tape& tape, Var x, const ModelConfig& cfg, Mode mode, Rng* rng) {
  if (mode != Mode::kTrain || cfg.dropout == 0.0) return x;
  if (!rng) throw std::logic_error("training-mode forward pass needs an rng");
  const Matrix& v = tape.value(x);
  return tape.hadamard(x, dropout_mask(v.rows(), v.cols(), cfg.dropout, *rng));
}

}  // namespace

Var encode_set_attn(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                    std::span<const ItemId> items) {
  const auto members = checked_members(items, cfg);
  Var m = tape.gather(params.item_embedding, members);
  Var q = tape.matmul(m, tape.param(params.encoder_query));
  Var k = tape.matmul(m, tape.param(params.encoder_key));
  Var w = tape.matmul_nt(q, k);
  Var a = tape.softmax(tape.row_sums(w));
  return tape.matmul(tape.transpose(a), m);
}

Var encode_set_avg(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                   std::span<const ItemId> items) {
  const auto members = checked_members(items, cfg);
  return tape.mean_rows(tape.gather(params.item_embedding, members));
}

Var embed_sequence(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                   const HybridSequence& seq, Mode mode, Rng* rng) {
  const std::size_t len = seq.tokens.size();
  if (len == 0) throw DataError("cannot embed an empty sequence");
  if (len > static_cast<std::size_t>(cfg.max_seq_len)) {
    throw DimensionError("sequence length " + std::to_string(len) + " exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));
  }
  std::vector<Var> parts;
  std::vector<ItemId> run;
  auto flush_run = [&] {
    if (run.empty()) return;
    parts.push_back(tape.gather(params.item_embedding, run));
    run.clear();
  };
  for (const auto& t : seq.tokens) {
    if (t.id == cfg.catalog().special_token()) {
      flush_run();
      switch (cfg.encoder) {
        case EncoderKind::kAttnPool: parts.push_back(encode_set_attn(tape, params, cfg, t.meta)); break;
        case EncoderKind::kAvgPool: parts.push_back(encode_set_avg(tape, params, cfg, t.meta)); break;
        case EncoderKind::kNone:
          throw DataError("special token in input while the model has no set encoder; "
                          "flatten or drop in-store positions first");
      }
    } else {
      if (!cfg.catalog().contains(t.id)) {
        throw DataError("token id " + std::to_string(t.id) + " outside catalog");
      }
      run.push_back(t.id);
    }
  }
  flush_run();
  Var items = parts.size() == 1 ? parts.front() : tape.concat_rows(parts);
  std::vector<ItemId> positions(len);
  for (std::size_t i = 0; i < len; ++i) positions[i] = static_cast<ItemId>(i);
  Var x = tape.add(items, tape.gather(params.position_embedding, positions));
  return maybe_dropout(tape, x, cfg, mode, rng);
}

Var backbone_forward(Tape& tape, Var input, const ModelParams& params, const ModelConfig& cfg,
                     Mode mode, Rng* rng) {
  const std::size_t len = tape.value(input).rows();
  if (len == 0) throw DimensionError("backbone needs at least one position");
  if (len > static_cast<std::size_t>(cfg.max_seq_len)) {
    throw DimensionError("sequence length exceeds max_seq_len");
  }
  const auto head_dim = static_cast<std::size_t>(cfg.dim / cfg.heads);
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Var x = input;
  for (const auto& b : params.blocks) {
    Var h = tape.layer_norm(x, tape.param(b.ln1_gain), tape.param(b.ln1_bias), cfg.ln_epsilon);
    Var q = tape.matmul(h, tape.param(b.attn_query));
    Var k = tape.matmul(h, tape.param(b.attn_key));
    Var v = tape.matmul(h, tape.param(b.attn_value));
    std::vector<Var> heads;
    for (int i = 0; i < cfg.heads; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * head_dim;
      Var qh = cfg.heads == 1 ? q : tape.slice_cols(q, off, head_dim);
      Var kh = cfg.heads == 1 ? k : tape.slice_cols(k, off, head_dim);
      Var vh = cfg.heads == 1 ? v : tape.slice_cols(v, off, head_dim);
      Var probs = tape.causal_softmax(tape.scale(tape.matmul_nt(qh, kh), att_scale));
      heads.push_back(tape.matmul(probs, vh));
    }
    Var attn = heads.size() == 1 ? heads.front() : tape.concat_cols(heads);
    x = tape.add(x, maybe_dropout(tape, attn, cfg, mode, rng));

    Var h2 = tape.layer_norm(x, tape.param(b.ln2_gain), tape.param(b.ln2_bias), cfg.ln_epsilon);
    Var f = tape.relu(
        tape.add_row(tape.matmul(h2, tape.param(b.ffn_w1)), tape.param(b.ffn_b1)));
    f = maybe_dropout(tape, f, cfg, mode, rng);
    Var f2 = tape.add_row(tape.matmul(f, tape.param(b.ffn_w2)), tape.param(b.ffn_b2));
    x = tape.add(x, maybe_dropout(tape, f2, cfg, mode, rng));
  }
  return tape.layer_norm(x, tape.param(params.final_gain), tape.param(params.final_bias),
                         cfg.ln_epsilon);
}

std::vector<double> encode_set(const ModelParams& params, const ModelConfig& cfg,
                               std::span<const ItemId> items) {
  Tape tape;
  Var out = cfg.encoder == EncoderKind::kAvgPool ? encode_set_avg(tape, params, cfg, items)
                                                 : encode_set_attn(tape, params, cfg, items);
  const auto v = tape.value(out).values();
  return {v.begin(), v.end()};
}

std::vector<double> set_attention_scores(const ModelParams& params, const ModelConfig& cfg,
                                         std::span<const ItemId> items) {
  const auto members = checked_members(items, cfg);
  Tape tape;
  Var m = tape.gather(params.item_embedding, members);
  Var q = tape.matmul(m, tape.param(params.encoder_query));
  Var k = tape.matmul(m, tape.param(params.encoder_key));
  Var a = tape.softmax(tape.row_sums(tape.matmul_nt(q, k)));
  const auto v = tape.value(a).values();
  return {v.begin(), v.end()};
}

Matrix hidden_states(const ModelParams& params, const ModelConfig& cfg, const HybridSequence& seq) {
  Tape tape;
  Var x = embed_sequence(tape, params, cfg, seq, Mode::kEval, nullptr);
  return tape.value(backbone_forward(tape, x, params, cfg, Mode::kEval, nullptr));
}

std::vector<double> score_candidates(std::span<const double> hidden,
                                     std::span<const ItemId> candidates,
                                     const ModelParams& params, const ModelConfig& cfg) {
  const Matrix& table = params.item_embedding.value;
  if (hidden.size() != table.cols()) throw DimensionError("hidden width differs from embedding");
  std::vector<double> logits;
  logits.reserve(candidates.size());
  for (ItemId c : candidates) {
    if (c == cfg.catalog().special_token()) {
      throw DataError("the special token cannot be a candidate");
    }
    if (!cfg.catalog().contains(c)) {
      throw DataError("candidate " + std::to_string(c) + " outside catalog");
    }
    logits.push_back(dot(hidden, table.row(static_cast<std::size_t>(c))));
  }
  return logits;
}

}  // namespace omniseq
