#include "omniseq/training.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "omniseq/evaluation.hpp"
#include "omniseq/matrix.hpp"

namespace omniseq {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kOnlineOnly: return "online-only";
    case Variant::kWithStore: return "w-store";
    case Variant::kAvgEncoder: return "avg-enc";
    case Variant::kAttnEncoder: return "attn-enc";
  }
  return "online-only";
}

Variant parse_variant(std::string_view s) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

EncoderKind encoder_for(Variant v) {
  switch (v) {
    case Variant::kAvgEncoder: return EncoderKind::kAvgPool;
    case Variant::kAttnEncoder: return EncoderKind::kAttnPool;
    default: return EncoderKind::kNone;
  }
}

HybridSequence variant_input(const HybridSequence& seq, Variant v) {
  switch (v) {
    case Variant::kOnlineOnly: return drop_in_store(seq);
    case Variant::kWithStore: return flatten_sequence(seq);
    default: return seq;
  }
}

std::string_view to_string(SplitMode m) { return m == SplitMode::kPaper ? "paper" : "clean"; }

SplitMode parse_split_mode(std::string_view s) {
  if (s == "paper") return SplitMode::kPaper;
  if (s == "clean") return SplitMode::kClean;
  throw ConfigError("unknown split mode '" + std::string(s) + "'");
}

namespace {

HybridSequence prefix(const HybridSequence& seq, std::size_t len) {
  HybridSequence out{seq.user, seq.catalog, seq.max_seq_len, {}};
  out.tokens.assign(seq.tokens.begin(), seq.tokens.begin() + static_cast<std::ptrdiff_t>(len));
  return out;
}

}  // namespace

std::optional<UserSplit> make_examples(const HybridSequence& seq, SplitMode mode) {
  std::vector<std::size_t> online;
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    if (seq.tokens[i].channel == Channel::kOnline) online.push_back(i);
  }
  if (online.size() < 2) return std::nullopt;

  const std::size_t last = online.back();
  const std::size_t second_last = online[online.size() - 2];

  UserSplit split;
  split.user = seq.user;
  split.history = interacted_items(seq);
  split.test = HeldOut{prefix(seq, last), seq.tokens[last].id};

  std::size_t train_len = last;
  if (mode == SplitMode::kClean) {
    train_len = second_last;
    if (second_last > 0) split.validation = HeldOut{prefix(seq, second_last), seq.tokens[second_last].id};
  }
  split.train.user = seq.user;
  split.train.input = prefix(seq, train_len);
  for (std::size_t p = 0; p + 1 < train_len; ++p) {
    const Token& next = seq.tokens[p + 1];
    if (next.channel == Channel::kOnline) {
      split.train.targets.push_back(SupervisedTarget{p, next.id, {}});
    }
  }
  return split;
}

std::optional<UserSplit> prepare_user(const HybridSequence& seq, Variant variant, SplitMode mode,
                                      std::size_t max_seq_len) {
  HybridSequence raw = seq;
  raw.max_seq_len = std::min(seq.max_seq_len, max_seq_len);
  if (raw.tokens.size() > raw.max_seq_len) {
    raw.tokens.erase(raw.tokens.begin(),
                     raw.tokens.end() - static_cast<std::ptrdiff_t>(raw.max_seq_len));
  }
  auto split = make_examples(variant_input(raw, variant), mode);
  if (split) split->history = interacted_items(raw);
  return split;
}

std::vector<ItemId> sample_negatives(Rng& rng, std::size_t k, std::span<const ItemId> excluded,
                                     Catalog catalog) {
  auto is_excluded = [&](ItemId id) {
    return std::binary_search(excluded.begin(), excluded.end(), id);
  };
  std::size_t blocked = 0;
  for (std::size_t i = 0; i < excluded.size(); ++i) {
    if (catalog.contains(excluded[i]) && (i == 0 || excluded[i] != excluded[i - 1])) ++blocked;
  }
  const std::size_t available = static_cast<std::size_t>(catalog.size) - blocked;
  if (k > available) {
    throw DataError("catalog exhausted: need " + std::to_string(k) + " negatives, " +
                    std::to_string(available) + " items available");
  }
  std::vector<ItemId> out;
  out.reserve(k);
  if (k == 0) return out;

  if (2 * k >= available) {
    // Dense case: partial Fisher-Yates over the allowed items.
    std::vector<ItemId> pool;
    pool.reserve(available);
    for (ItemId id = 0; id < catalog.size; ++id) {
      if (!is_excluded(id)) pool.push_back(id);
    }
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      out.push_back(pool[i]);
    }
    return out;
  }

  std::uniform_int_distribution<ItemId> draw(0, catalog.size - 1);
  std::unordered_set<ItemId> chosen;
  while (out.size() < k) {
    const ItemId id = draw(rng);
    if (is_excluded(id) || !chosen.insert(id).second) continue;
    out.push_back(id);
  }
  return out;
}

double sampled_ce_loss(double positive, std::span<const double> negatives) {
  std::vector<double> logits;
  logits.reserve(negatives.size() + 1);
  logits.push_back(positive);
  logits.insert(logits.end(), negatives.begin(), negatives.end());
  return log_sum_exp(logits) - positive;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || batch_size < 1 || epochs < 1 || max_seq_len < 1 || negatives < 1) {
    throw ConfigError("lr, batch_size, epochs, max_seq_len and negatives must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

double batch_loss(const ModelParams& params, const ModelConfig& cfg,
                  std::span<const TrainingExample> batch, Mode mode, Rng* rng,
                  Gradients* grads) {
  std::size_t positions = 0;
  for (const auto& ex : batch) positions += ex.targets.size();
  if (positions == 0) return 0.0;
  const double scale = 1.0 / static_cast<double>(positions);
  const ItemId special = cfg.catalog().special_token();

  double total = 0.0;
  std::vector<CandidateRow> rows;
  for (const auto& ex : batch) {
    if (ex.targets.empty()) continue;
    rows.clear();
    for (const auto& t : ex.targets) {
      if (t.target == special) throw DataError("special token used as a training target");
      CandidateRow row{t.position, {}};
      row.candidates.reserve(t.negatives.size() + 1);
      row.candidates.push_back(t.target);
      for (ItemId n : t.negatives) {
        if (n == special || n == t.target) throw DataError("invalid training negative");
        row.candidates.push_back(n);
      }
      rows.push_back(std::move(row));
    }
    Tape tape;
    Var x = embed_sequence(tape, params, cfg, ex.input, mode, rng);
    Var h = backbone_forward(tape, x, params, cfg, mode, rng);
    Var loss = tape.sampled_softmax_ce(h, params.item_embedding, rows, scale);
    total += tape.value(loss)(0, 0);
    if (grads) tape.backward(loss, *grads);
  }
  if (!std::isfinite(total)) throw NumericError("non-finite training loss");
  return total;
}

Trainer::Trainer(ModelConfig cfg, const TrainConfig& tcfg, ModelParams params)
    : cfg_(cfg), params_(std::make_unique<ModelParams>(std::move(params))) {
  cfg_.validate();
  tcfg.validate();
  const auto ordered = std::as_const(*params_).ordered();
  grads_ = Gradients(ordered);
  const AdamHyperParams hyper{tcfg.lr, 0.9, 0.999, 1e-8};
  for (const Parameter* p : ordered) adam_.push_back(AdamState::for_shape(p->value, hyper));
}

double Trainer::step(std::span<const TrainingExample> batch, Rng& rng) {
  grads_.zero();
  const double loss = batch_loss(*params_, cfg_, batch, Mode::kTrain, &rng, &grads_);
  auto ordered = params_->ordered();
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const Matrix& g = grads_.at(*ordered[i]);
    if (!g.all_finite()) throw NumericError("non-finite gradient for " + ordered[i]->name);
    adam_step(ordered[i]->value, g, adam_[i]);
  }
  return loss;
}

ModelConfig effective_model_config(ModelConfig cfg, Variant variant, const TrainConfig& tcfg) {
  cfg.encoder = encoder_for(variant);
  cfg.dropout = tcfg.dropout;
  cfg.max_seq_len = tcfg.max_seq_len;
  return cfg;
}

TrainResult train(std::span<const HybridSequence> data, Variant variant,
                  const ModelConfig& model_cfg, const TrainConfig& tcfg, const TrainHooks& hooks) {
  tcfg.validate();
  const ModelConfig cfg = effective_model_config(model_cfg, variant, tcfg);
  cfg.validate();
  const Catalog catalog = cfg.catalog();

  TrainResult result;
  result.config = cfg;
  std::vector<UserSplit> splits;
  for (const auto& seq : data) {
    auto split = prepare_user(seq, variant, tcfg.mode, static_cast<std::size_t>(tcfg.max_seq_len));
    if (split) {
      splits.push_back(std::move(*split));
    } else {
      ++result.skipped_users;
    }
  }
  result.users = splits.size();
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (!splits[i].train.targets.empty()) order.push_back(i);
  }
  if (order.empty()) throw DataError("no trainable users after leave-one-out filtering");

  Trainer trainer(cfg, tcfg, init_params(cfg, derive_seed(tcfg.seed, 1)));
  Rng rng(derive_seed(tcfg.seed, 2));
  const std::uint64_t val_seed = derive_seed(tcfg.seed, 3);
  const EvalOptions val_opts{100, 10, tcfg.exclude_history};
  const auto batch_size = static_cast<std::size_t>(tcfg.batch_size);
  const auto negatives = static_cast<std::size_t>(tcfg.negatives);

  std::optional<double> best_val;
  std::vector<TrainingExample> batch;
  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    double loss_sum = 0.0;
    std::size_t positions = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      batch.clear();
      std::size_t batch_positions = 0;
      for (std::size_t b = start; b < end; ++b) {
        const UserSplit& split = splits[order[b]];
        TrainingExample ex = split.train;
        for (auto& t : ex.targets) {
          std::vector<ItemId> excluded;
          if (tcfg.exclude_history) excluded = split.history;
          excluded.push_back(t.target);
          excluded.push_back(catalog.special_token());
          std::sort(excluded.begin(), excluded.end());
          t.negatives = sample_negatives(rng, negatives, excluded, catalog);
        }
        if (hooks.on_example) hooks.on_example(ex);
        batch_positions += ex.targets.size();
        batch.push_back(std::move(ex));
      }
      loss_sum += trainer.step(batch, rng) * static_cast<double>(batch_positions);
      positions += batch_positions;
    }

    EpochLog log{epoch, loss_sum / static_cast<double>(positions), std::nullopt, std::nullopt};
    bool keep = tcfg.mode == SplitMode::kPaper;
    if (tcfg.mode == SplitMode::kClean) {
      const EvalReport val = evaluate_heldout(splits, HeldOutSlot::kValidation,
                                              model_scorer(trainer.params(), cfg), val_seed,
                                              val_opts, catalog);
      log.val_hit10 = val.hit10;
      log.val_ndcg10 = val.ndcg10;
      keep = !best_val || val.ndcg10 > *best_val;
      if (keep) best_val = val.ndcg10;
    }
    if (keep) {
      result.params = trainer.params();
      result.selected_epoch = epoch;
    }
    if (hooks.on_epoch) hooks.on_epoch(log);
    result.log.push_back(log);
  }
  return result;
}

}  // namespace omniseq
