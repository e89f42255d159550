#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "omniseq/evaluation.hpp"
#include "omniseq/model.hpp"
#include "omniseq/pipeline.hpp"
#include "omniseq/registry.hpp"
#include "omniseq/synthgen.hpp"
#include "omniseq/training.hpp"

namespace omniseq {

inline constexpr const char* kToolVersion = "omniseq 0.1.0";

Json to_json(const WindowConfig& cfg);
WindowConfig window_config_from_json(const Json& j);
Json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j);
Json to_json(const EvalOptions& opts);
EvalOptions eval_options_from_json(const Json& j);

// Hex FNV-1a of the compact JSON dump.
std::string config_hash(const Json& j);

// A directory written by `ingest`: the offline store plus dataset.json
// holding the catalog size and maximum sequence length.
struct DatasetInfo {
  int catalog_size = 0;
  int max_seq_len = 90;
};

void write_dataset_info(const std::filesystem::path& dir, const DatasetInfo& info);
DatasetInfo read_dataset_info(const std::filesystem::path& dir);
// Latest hybrid sequence per user, ordered by user id.
std::vector<HybridSequence> load_dataset(const std::filesystem::path& dir);

struct PipelineSettings {
  WindowConfig window{86400, 21600};
  Timestamp online_batch_secs = 3600;  // micro-batch span of event time
  Timestamp store_batch_secs = 86400;  // store loads land at the end of each span
  int max_seq_len = 90;
};

Json to_json(const PipelineSettings& p);
PipelineSettings pipeline_settings_from_json(const Json& j);

// Each seed s generates a corpus with generator seed s and trains every
// variant with training seed s; evaluation negatives also derive from s, so
// all variants of one seed see the same data and candidates.
struct ExperimentConfig {
  GenConfig gen;
  PipelineSettings pipeline;
  ModelConfig model;
  TrainConfig train;
  EvalOptions eval;
  std::vector<Variant> variants{std::begin(kAllVariants), std::end(kAllVariants)};
  std::vector<std::uint64_t> seeds{0};

  void validate() const;
};

Json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const Json& j);

struct VariantResult {
  Variant variant = Variant::kOnlineOnly;
  std::vector<double> hit10;  // per seed
  std::vector<double> ndcg10;
  std::vector<int> selected_epoch;
  double mean_hit10 = 0.0;
  double mean_ndcg10 = 0.0;
};

struct ExperimentReport {
  std::vector<std::uint64_t> seeds;
  std::vector<VariantResult> variants;
  std::size_t users = 0;  // evaluated users of the first seed

  const VariantResult* find(Variant v) const;
  Json to_json() const;
  // Comparison table: best value per metric in bold, relative change
  // against online-only.
  std::string markdown() const;
};

struct ExperimentHooks {
  std::function<void(const TrainingExample&)> on_example;
  std::function<void(const EvalRecord&)> on_eval_record;
  std::function<void(std::uint64_t seed, Variant, const EpochLog&)> on_epoch;
};

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::exception& cause);
  const std::string& stage() const { return stage_; }
  // Exit code of the underlying failure.
  int exit_code() const { return exit_code_; }

 private:
  std::string stage_;
  int exit_code_;
};

// Runs generate -> pipeline -> train -> evaluate for every seed and variant.
// With `out`, writes config.json, report.json, report.md, manifest.json and
// per-run checkpoints and metric logs under it.
ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& out = std::nullopt,
                                const ExperimentHooks& hooks = {});

// Checks the manifest's config hashes and returns the embedded config.
ExperimentConfig config_from_manifest(const std::filesystem::path& manifest);

// Exit status for an exception thrown by any stage.
int exit_code_for(const std::exception& e);

}  // namespace omniseq
