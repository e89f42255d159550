#include "omniseq/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "omniseq/metrics.hpp"

namespace omniseq {

Scorer model_scorer(const ModelParams& params, const ModelConfig& cfg) {
  return [&params, cfg](const HybridSequence& context, std::span<const ItemId> candidates) {
    const Matrix hidden = hidden_states(params, cfg, context);
    return score_candidates(hidden.row(hidden.rows() - 1), candidates, params, cfg);
  };
}

EvalReport evaluate_heldout(std::span<const UserSplit> users, HeldOutSlot slot,
                            const Scorer& scorer, std::uint64_t seed, const EvalOptions& opts,
                            Catalog catalog) {
  std::vector<const UserSplit*> ordered;
  for (const auto& u : users) ordered.push_back(&u);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const UserSplit* a, const UserSplit* b) { return a->user < b->user; });

  EvalReport report;
  double hit_sum = 0.0;
  double ndcg_sum = 0.0;
  const std::uint64_t slot_seed = derive_seed(seed, slot == HeldOutSlot::kTest ? 11 : 12);
  for (const UserSplit* u : ordered) {
    const HeldOut* held = slot == HeldOutSlot::kTest ? &u->test
                          : u->validation            ? &*u->validation
                                                     : nullptr;
    if (!held || held->context.tokens.empty()) {
      ++report.skipped;
      continue;
    }
    std::vector<ItemId> excluded;
    if (opts.exclude_history) excluded = u->history;
    excluded.push_back(held->target);
    excluded.push_back(catalog.special_token());
    std::sort(excluded.begin(), excluded.end());

    Rng rng(derive_seed(slot_seed, static_cast<std::uint64_t>(u->user)));
    EvalRecord rec;
    rec.user = u->user;
    rec.target = held->target;
    rec.candidates.push_back(held->target);
    const auto negs =
        sample_negatives(rng, static_cast<std::size_t>(opts.negatives), excluded, catalog);
    rec.candidates.insert(rec.candidates.end(), negs.begin(), negs.end());
    rec.scores = scorer(held->context, rec.candidates);
    if (rec.scores.size() != rec.candidates.size()) {
      throw DataError("scorer returned the wrong number of scores");
    }
    for (double s : rec.scores) {
      if (!std::isfinite(s)) throw NumericError("non-finite candidate score");
    }
    rec.rank = rank_target(rec.scores, 0);
    hit_sum += hit_at_k(rec.rank, opts.k);
    ndcg_sum += ndcg_at_k(rec.rank, opts.k);
    report.records.push_back(std::move(rec));
  }
  report.users = report.records.size();
  if (report.users > 0) {
    report.hit10 = hit_sum / static_cast<double>(report.users);
    report.ndcg10 = ndcg_sum / static_cast<double>(report.users);
  }
  return report;
}

EvalReport evaluate(const ModelParams& params, const ModelConfig& cfg, Variant variant,
                    std::span<const HybridSequence> data, std::uint64_t seed,
                    const EvalOptions& opts) {
  cfg.validate();
  if (encoder_for(variant) != cfg.encoder) {
    throw ConfigError("checkpoint encoder does not match variant " + std::string(to_string(variant)));
  }
  std::vector<UserSplit> splits;
  std::size_t skipped = 0;
  for (const auto& seq : data) {
    if (seq.catalog.size != cfg.catalog_size) {
      throw ConfigError("dataset catalog size differs from the checkpoint's");
    }
    auto split = prepare_user(seq, variant, SplitMode::kPaper,
                              static_cast<std::size_t>(cfg.max_seq_len));
    if (split) {
      splits.push_back(std::move(*split));
    } else {
      ++skipped;
    }
  }
  EvalReport report = evaluate_heldout(splits, HeldOutSlot::kTest, model_scorer(params, cfg), seed,
                                       opts, cfg.catalog());
  report.skipped += skipped;
  return report;
}

}  // namespace omniseq
