#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "omniseq/domain.hpp"
#include "omniseq/registry.hpp"
#include "omniseq/stores.hpp"
#include "omniseq/windowing.hpp"

namespace omniseq {

inline constexpr const char* kSequenceSchema = "hybrid_seq";

FeatureSchema hybrid_sequence_schema();

// {"user": u, "tokens": [{"ts": t, "item": i} | {"ts": t, "set": [...]}, ...]}
Json sequence_to_json(const HybridSequence& seq);
HybridSequence sequence_from_json(const Json& j, Catalog catalog, std::size_t max_seq_len);

struct PipelineConfig {
  WindowConfig window;
  std::size_t max_seq_len = 90;
  Catalog catalog;
};

struct StoreBatch {
  Timestamp available_at = 0;  // logical time at which the batch load lands
  std::vector<RawStoreTransaction> transactions;
};

struct PipelineStats {
  std::size_t online_events = 0;
  std::size_t store_transactions = 0;
  std::size_t flushes = 0;
  std::size_t snapshots = 0;
};

// Event-time micro-batch operator. The watermark is the largest online
// timestamp seen; a window flushes once the watermark reaches its end. Each
// flush joins the window's online events with pending store transactions that
// closed before the window end, merges them into per-user state
// (deduplicated), and emits a HybridSequence snapshot per touched user to the
// online cache and, as one part file, to the offline store.
//
// Ingestion is safe from several producer threads; flushes serialize.
class StreamingPipeline {
 public:
  StreamingPipeline(PipelineConfig cfg, FeatureRegistry& registry, OnlineCache& cache,
                    OfflineStore* offline);

  void ingest_online(std::span<const RawOnlineEvent> events);
  void ingest_store(std::span<const RawStoreTransaction> transactions);
  void flush_ready();
  // Flushes every open window and all pending store transactions.
  void finish();

  Timestamp watermark() const;
  PipelineStats stats() const;
  int schema_version() const { return schema_version_; }

 private:
  void flush_window(Timestamp start);
  void flush_remaining_store();
  void emit(const std::set<UserId>& touched, Timestamp window_start, Timestamp as_of);
  void check_item(ItemId id) const;

  PipelineConfig cfg_;
  FeatureRegistry& registry_;
  OnlineCache& cache_;
  OfflineStore* offline_;
  int schema_version_ = 0;

  mutable std::mutex mu_;
  bool seen_online_ = false;
  Timestamp watermark_ = 0;
  std::map<Timestamp, std::vector<RawOnlineEvent>> windows_;
  std::vector<RawOnlineEvent> late_online_;
  std::vector<RawStoreTransaction> pending_store_;
  bool flushed_any_ = false;
  Timestamp flushed_until_ = 0;  // end of the last flushed window
  Timestamp last_as_of_ = 0;
  std::map<UserId, std::set<BehaviorEvent, decltype(&event_order)>> state_;
  PipelineStats stats_;
};

// Drives a StreamingPipeline: online micro-batches in order, each store batch
// ingested once the watermark reaches its availability time, then a final
// flush.
PipelineStats run_pipeline(std::span<const std::vector<RawOnlineEvent>> online_batches,
                           std::span<const StoreBatch> store_batches, const PipelineConfig& cfg,
                           FeatureRegistry& registry, OnlineCache& cache, OfflineStore* offline);

// Splits time-sorted online events into micro-batches of `interval` seconds of
// event time, and store transactions into batches that land at the end of
// each `interval`.
std::vector<std::vector<RawOnlineEvent>> online_micro_batches(std::vector<RawOnlineEvent> events,
                                                              Timestamp interval);
std::vector<StoreBatch> store_batches(std::vector<RawStoreTransaction> txns, Timestamp interval);

// Latest snapshot per user from the offline store, ordered by user id.
std::vector<HybridSequence> latest_sequences(const OfflineStore& store, Catalog catalog,
                                             std::size_t max_seq_len);

// Newline-delimited canonical encoding of a set of sequences.
std::string canonical_dump(std::span<const HybridSequence> sequences);

// Newline-delimited input files.
std::vector<RawOnlineEvent> read_online_events(const std::filesystem::path& path);
std::vector<RawStoreTransaction> read_store_transactions(const std::filesystem::path& path);
void write_online_events(const std::filesystem::path& path, std::span<const RawOnlineEvent> events);
void write_store_transactions(const std::filesystem::path& path,
                              std::span<const RawStoreTransaction> txns);

}  // namespace omniseq
