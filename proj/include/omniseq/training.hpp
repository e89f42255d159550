#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "omniseq/adam.hpp"
#include "omniseq/domain.hpp"
#include "omniseq/model.hpp"
#include "omniseq/rng.hpp"

namespace omniseq {

// The four model variants compared by the experiment harness.
enum class Variant : std::uint8_t { kOnlineOnly, kWithStore, kAvgEncoder, kAttnEncoder };

inline constexpr Variant kAllVariants[] = {Variant::kOnlineOnly, Variant::kWithStore,
                                           Variant::kAvgEncoder, Variant::kAttnEncoder};

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);
EncoderKind encoder_for(Variant v);

// online-only drops in-store positions, w-store flattens sets into items,
// the encoder variants keep special tokens.
HybridSequence variant_input(const HybridSequence& seq, Variant v);

// kPaper: the second-to-last online behavior is the last training target and
// the final epoch is kept. kClean: it is held out for validation and the
// epoch with the best validation NDCG@10 is kept.
enum class SplitMode : std::uint8_t { kPaper, kClean };

std::string_view to_string(SplitMode m);
SplitMode parse_split_mode(std::string_view s);

struct SupervisedTarget {
  std::size_t position = 0;  // input position whose output predicts `target`
  ItemId target = 0;
  std::vector<ItemId> negatives;
};

struct TrainingExample {
  UserId user = 0;
  HybridSequence input;
  std::vector<SupervisedTarget> targets;
};

struct HeldOut {
  HybridSequence context;
  ItemId target = 0;
};

struct UserSplit {
  UserId user = 0;
  TrainingExample train;
  std::optional<HeldOut> validation;
  HeldOut test;
  // Items excluded from negative sampling for this user.
  std::vector<ItemId> history;
};

// Leave-one-out split of one sequence. Targets are online items only; a
// position whose successor is not an online item carries no loss. Returns
// nullopt (skip the user) when fewer than two online behaviors exist.
std::optional<UserSplit> make_examples(const HybridSequence& seq, SplitMode mode);

// Truncates to `max_seq_len`, applies the variant transform and splits.
// `history` always comes from the untransformed sequence so every variant
// excludes the same items.
std::optional<UserSplit> prepare_user(const HybridSequence& seq, Variant variant, SplitMode mode,
                                      std::size_t max_seq_len);

// k distinct items drawn uniformly from the catalog minus `excluded` (sorted
// ascending). Throws DataError when fewer than k items remain.
std::vector<ItemId> sample_negatives(Rng& rng, std::size_t k, std::span<const ItemId> excluded,
                                     Catalog catalog);

// -log softmax({positive} U negatives) at the positive.
double sampled_ce_loss(double positive, std::span<const double> negatives);

struct TrainConfig {
  double lr = 0.001;
  int batch_size = 512;
  double dropout = 0.2;
  int epochs = 20;
  int max_seq_len = 90;
  int negatives = 100;
  std::uint64_t seed = 0;
  SplitMode mode = SplitMode::kClean;
  bool exclude_history = true;

  void validate() const;
};

// Mean sampled cross-entropy over every supervised position in `batch`. When
// `grads` is given, the gradient of that mean is accumulated into it.
double batch_loss(const ModelParams& params, const ModelConfig& cfg,
                  std::span<const TrainingExample> batch, Mode mode, Rng* rng,
                  Gradients* grads);

// Owns parameters, gradient buffers and Adam state for one training run.
class Trainer {
 public:
  Trainer(ModelConfig cfg, const TrainConfig& tcfg, ModelParams params);

  // One optimizer step; returns the mean batch loss before the update.
  double step(std::span<const TrainingExample> batch, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  const ModelParams& params() const { return *params_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<ModelParams> params_;
  Gradients grads_;
  std::vector<AdamState> adam_;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  std::optional<double> val_hit10;
  std::optional<double> val_ndcg10;
};

struct TrainHooks {
  // Sees every example (with its negatives) right before it is used.
  std::function<void(const TrainingExample&)> on_example;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  ModelConfig config;
  ModelParams params;  // the selected checkpoint
  int selected_epoch = 0;
  std::vector<EpochLog> log;
  std::size_t users = 0;
  std::size_t skipped_users = 0;
};

// Model config with the variant's encoder and the run's dropout/max length.
ModelConfig effective_model_config(ModelConfig cfg, Variant variant, const TrainConfig& tcfg);

TrainResult train(std::span<const HybridSequence> data, Variant variant,
                  const ModelConfig& model_cfg, const TrainConfig& tcfg,
                  const TrainHooks& hooks = {});

}  // namespace omniseq
