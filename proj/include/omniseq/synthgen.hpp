#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "omniseq/registry.hpp"
#include "omniseq/windowing.hpp"

namespace omniseq {

// Synthetic hybrid-behavior corpus. Each user walks a hidden Markov chain
// over `intents`; online behaviors emit one item of the current intent,
// in-store behaviors emit a set whose members come from the current intent
// with probability `rho` and uniformly from the catalog otherwise.
struct GenConfig {
  int users = 2000;
  int catalog_size = 5000;
  int intents = 50;
  int items_per_intent = 100;  // items [k*n, (k+1)*n) belong to intent k
  int min_behaviors = 20;
  double instore_fraction = 0.40;
  double mean_length = 33.0;
  // Truncated geometric set sizes on [1, set_size_max] with this mean.
  double set_size_mean = 5.0;
  int set_size_max = 12;
  double rho = 0.8;
  double stay_prob = 0.8;  // probability the intent persists to the next behavior
  Timestamp start_time = 1'700'000'000;
  double mean_gap_secs = 6 * 3600.0;
  std::uint64_t seed = 0;

  void validate() const;
};

Json to_json(const GenConfig& cfg);
GenConfig gen_config_from_json(const Json& j);

struct UserTruth {
  UserId user = 0;
  std::vector<int> intents;  // hidden intent per behavior, in time order
  std::vector<Channel> channels;
};

struct Corpus {
  GenConfig config;
  std::vector<RawOnlineEvent> online;       // sorted by (ts, user, item)
  std::vector<RawStoreTransaction> store;   // sorted by (ts, user)
  std::vector<int> item_intent;             // -1 for items outside every intent
  std::vector<UserTruth> truth;
};

Corpus generate(const GenConfig& cfg);

// online.jsonl, store.jsonl and ground_truth.json under `dir`.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);

}  // namespace omniseq
