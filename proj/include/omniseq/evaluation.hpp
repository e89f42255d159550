#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "omniseq/model.hpp"
#include "omniseq/training.hpp"

namespace omniseq {

struct EvalOptions {
  int negatives = 100;
  int k = 10;
  // Also exclude the user's interacted items from the sampled negatives.
  bool exclude_history = true;
};

struct EvalRecord {
  UserId user = 0;
  ItemId target = 0;
  std::vector<ItemId> candidates;  // target first, then the negatives
  std::vector<double> scores;
  int rank = 0;
};

struct EvalReport {
  double hit10 = 0.0;
  double ndcg10 = 0.0;
  std::size_t users = 0;
  std::size_t skipped = 0;
  std::vector<EvalRecord> records;
};

enum class HeldOutSlot : std::uint8_t { kTest, kValidation };

using Scorer =
    std::function<std::vector<double>(const HybridSequence& context, std::span<const ItemId>)>;

Scorer model_scorer(const ModelParams& params, const ModelConfig& cfg);

// Scores target + sampled negatives per user and averages Hit@k / NDCG@k in
// user order. Negatives come from a per-user stream derived from `seed`, so
// every variant sees the same candidates. Users without the requested slot
// are skipped and counted.
EvalReport evaluate_heldout(std::span<const UserSplit> users, HeldOutSlot slot,
                            const Scorer& scorer, std::uint64_t seed, const EvalOptions& opts,
                            Catalog catalog);

// Test-slot evaluation of a trained model on raw hybrid sequences.
EvalReport evaluate(const ModelParams& params, const ModelConfig& cfg, Variant variant,
                    std::span<const HybridSequence> data, std::uint64_t seed,
                    const EvalOptions& opts = {});

}  // namespace omniseq
