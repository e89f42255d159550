#include "omniseq/pipeline.hpp"

#include <algorithm>
#include <fstream>

namespace omniseq {

FeatureSchema hybrid_sequence_schema() {
  return FeatureSchema{kSequenceSchema,
                       0,
                       {{"user", FieldType::kInteger, true},
                        {"window_start", FieldType::kInteger, true},
                        {"tokens", FieldType::kTokenList, true}},
                       0};
}

Json sequence_to_json(const HybridSequence& seq) {
  Json tokens = Json::array();
  for (const auto& t : seq.tokens) {
    if (seq.is_special(t)) {
      tokens.push_back({{"ts", t.timestamp}, {"set", t.meta}});
    } else {
      tokens.push_back({{"ts", t.timestamp}, {"item", t.id}});
    }
  }
  return Json{{"user", seq.user}, {"tokens", std::move(tokens)}};
}

HybridSequence sequence_from_json(const Json& j, Catalog catalog, std::size_t max_seq_len) {
  HybridSequence seq{0, catalog, max_seq_len, {}};
  try {
    seq.user = j.at("user").get<UserId>();
    for (const auto& t : j.at("tokens")) {
      const auto ts = t.at("ts").get<Timestamp>();
      if (t.contains("set")) {
        auto members = t.at("set").get<std::vector<ItemId>>();
        std::sort(members.begin(), members.end());
        for (ItemId id : members) {
          if (!catalog.contains(id)) throw DataError("set member outside catalog");
        }
        seq.tokens.push_back(
            Token{catalog.special_token(), ts, Channel::kInStore, std::move(members)});
      } else {
        const auto id = t.at("item").get<ItemId>();
        if (!catalog.contains(id)) throw DataError("item outside catalog");
        seq.tokens.push_back(Token{id, ts, Channel::kOnline, {}});
      }
    }
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed sequence record: ") + e.what());
  }
  if (seq.tokens.size() > max_seq_len) {
    seq.tokens.erase(seq.tokens.begin(),
                     seq.tokens.end() - static_cast<std::ptrdiff_t>(max_seq_len));
  }
  return seq;
}

StreamingPipeline::StreamingPipeline(PipelineConfig cfg, FeatureRegistry& registry,
                                     OnlineCache& cache, OfflineStore* offline)
    : cfg_(cfg), registry_(registry), cache_(cache), offline_(offline) {
  cfg_.window.validate();
  if (cfg_.max_seq_len == 0) throw ConfigError("max_seq_len must be at least 1");
  if (cfg_.catalog.size <= 0) throw ConfigError("catalog size must be positive");
  schema_version_ = registry_.contains(kSequenceSchema)
                        ? registry_.latest(kSequenceSchema).version
                        : registry_.register_schema(hybrid_sequence_schema());
}

void StreamingPipeline::check_item(ItemId id) const {
  if (!cfg_.catalog.contains(id)) {
    throw DataError("item " + std::to_string(id) + " outside catalog of size " +
                    std::to_string(cfg_.catalog.size));
  }
}

void StreamingPipeline::ingest_online(std::span<const RawOnlineEvent> events) {
  std::scoped_lock lock(mu_);
  for (const auto& e : events) {
    check_item(e.item);
    bool assigned = false;
    for (Timestamp start : assign_windows(e.ts, cfg_.window)) {
      if (flushed_any_ && start + cfg_.window.window_duration <= flushed_until_) continue;
      windows_[start].push_back(e);
      assigned = true;
    }
    if (!assigned) late_online_.push_back(e);
    watermark_ = seen_online_ ? std::max(watermark_, e.ts) : e.ts;
    seen_online_ = true;
    ++stats_.online_events;
  }
}

void StreamingPipeline::ingest_store(std::span<const RawStoreTransaction> transactions) {
  std::scoped_lock lock(mu_);
  for (const auto& t : transactions) {
    if (t.items.empty()) {
      throw DataError("store transaction for user " + std::to_string(t.user) + " has no items");
    }
    for (ItemId id : t.items) check_item(id);
    pending_store_.push_back(t);
    ++stats_.store_transactions;
  }
}

void StreamingPipeline::flush_ready() {
  std::scoped_lock lock(mu_);
  while (!windows_.empty() && seen_online_ &&
         windows_.begin()->first + cfg_.window.window_duration <= watermark_) {
    flush_window(windows_.begin()->first);
  }
}

void StreamingPipeline::finish() {
  std::scoped_lock lock(mu_);
  while (!windows_.empty()) flush_window(windows_.begin()->first);
  flush_remaining_store();
}

Timestamp StreamingPipeline::watermark() const {
  std::scoped_lock lock(mu_);
  return watermark_;
}

PipelineStats StreamingPipeline::stats() const {
  std::scoped_lock lock(mu_);
  return stats_;
}

void StreamingPipeline::flush_window(Timestamp start) {
  auto node = windows_.extract(start);
  const Timestamp end = start + cfg_.window.window_duration;
  const UserGroups groups = aggregate_window(node.mapped(), start, cfg_.window);
  JoinResult joined = join_online_instore(groups, pending_store_, start, cfg_.window);
  pending_store_ = std::move(joined.deferred);

  std::set<UserId> touched;
  auto absorb = [&](BehaviorEvent e) {
    const UserId user = e.user;
    auto [it, created] = state_.try_emplace(user, &event_order);
    if (it->second.insert(std::move(e)).second) touched.insert(user);
  };
  for (auto& e : joined.events) absorb(std::move(e));
  for (const auto& e : late_online_) absorb(BehaviorEvent::online(e.user, e.ts, e.item));
  late_online_.clear();

  flushed_any_ = true;
  flushed_until_ = end;
  emit(touched, start, end);
}

void StreamingPipeline::flush_remaining_store() {
  if (pending_store_.empty() && late_online_.empty()) return;
  Timestamp as_of = flushed_any_ ? last_as_of_ + 1 : 0;
  std::set<UserId> touched;
  auto absorb = [&](BehaviorEvent e) {
    as_of = std::max(as_of, e.timestamp + 1);
    const UserId user = e.user;
    auto [it, created] = state_.try_emplace(user, &event_order);
    if (it->second.insert(std::move(e)).second) touched.insert(user);
  };
  for (const auto& t : pending_store_) absorb(BehaviorEvent::in_store(t.user, t.ts, t.items));
  for (const auto& e : late_online_) absorb(BehaviorEvent::online(e.user, e.ts, e.item));
  pending_store_.clear();
  late_online_.clear();
  flushed_any_ = true;
  emit(touched, as_of - cfg_.window.window_duration, as_of);
}

void StreamingPipeline::emit(const std::set<UserId>& touched, Timestamp window_start,
                             Timestamp as_of) {
  const std::size_t part = stats_.flushes++;
  last_as_of_ = as_of;
  if (touched.empty()) return;
  std::vector<FeatureRecord> records;
  records.reserve(touched.size());
  for (UserId user : touched) {
    const auto& events = state_.at(user);
    const std::vector<BehaviorEvent> ordered(events.begin(), events.end());
    const HybridSequence seq = build_hybrid_sequence(ordered, cfg_.max_seq_len, cfg_.catalog);
    Json payload = sequence_to_json(seq);
    payload["window_start"] = window_start;
    FeatureRecord record{user, kSequenceSchema, schema_version_, std::move(payload), as_of};
    registry_.validate(record);
    cache_.put(record);
    records.push_back(std::move(record));
  }
  stats_.snapshots += records.size();
  if (offline_) offline_->append(records, part);
}

PipelineStats run_pipeline(std::span<const std::vector<RawOnlineEvent>> online_batches,
                           std::span<const StoreBatch> store_batches, const PipelineConfig& cfg,
                           FeatureRegistry& registry, OnlineCache& cache, OfflineStore* offline) {
  StreamingPipeline pipeline(cfg, registry, cache, offline);
  std::size_t next_store = 0;
  for (const auto& batch : online_batches) {
    pipeline.ingest_online(batch);
    while (next_store < store_batches.size() &&
           store_batches[next_store].available_at <= pipeline.watermark()) {
      pipeline.ingest_store(store_batches[next_store++].transactions);
    }
    pipeline.flush_ready();
  }
  for (; next_store < store_batches.size(); ++next_store) {
    pipeline.ingest_store(store_batches[next_store].transactions);
  }
  pipeline.finish();
  return pipeline.stats();
}

namespace {

Timestamp bucket_of(Timestamp t, Timestamp interval) {
  Timestamp q = t / interval;
  if (t % interval != 0 && t < 0) --q;
  return q;
}

}  // namespace

std::vector<std::vector<RawOnlineEvent>> online_micro_batches(std::vector<RawOnlineEvent> events,
                                                              Timestamp interval) {
  if (interval <= 0) throw ConfigError("micro-batch interval must be positive");
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
    return std::tie(a.ts, a.user, a.item) < std::tie(b.ts, b.user, b.item);
  });
  std::vector<std::vector<RawOnlineEvent>> batches;
  Timestamp current = 0;
  for (auto& e : events) {
    const Timestamp b = bucket_of(e.ts, interval);
    if (batches.empty() || b != current) {
      batches.emplace_back();
      current = b;
    }
    batches.back().push_back(std::move(e));
  }
  return batches;
}

std::vector<StoreBatch> store_batches(std::vector<RawStoreTransaction> txns, Timestamp interval) {
  if (interval <= 0) throw ConfigError("store batch interval must be positive");
  std::stable_sort(txns.begin(), txns.end(), [](const auto& a, const auto& b) {
    return std::tie(a.ts, a.user, a.items) < std::tie(b.ts, b.user, b.items);
  });
  std::vector<StoreBatch> batches;
  Timestamp current = 0;
  for (auto& t : txns) {
    const Timestamp b = bucket_of(t.ts, interval);
    if (batches.empty() || b != current) {
      batches.push_back(StoreBatch{(b + 1) * interval, {}});
      current = b;
    }
    batches.back().transactions.push_back(std::move(t));
  }
  return batches;
}

std::vector<HybridSequence> latest_sequences(const OfflineStore& store, Catalog catalog,
                                             std::size_t max_seq_len) {
  const auto records = store.scan_all(kSequenceSchema);
  std::vector<HybridSequence> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const bool last_for_user = i + 1 == records.size() || records[i + 1].user != records[i].user;
    if (last_for_user) out.push_back(sequence_from_json(records[i].payload, catalog, max_seq_len));
  }
  return out;
}

std::string canonical_dump(std::span<const HybridSequence> sequences) {
  std::string out;
  for (const auto& seq : sequences) {
    out += sequence_to_json(seq).dump();
    out += '\n';
  }
  return out;
}

namespace {

template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      fn(Json::parse(line));
    } catch (const Json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<RawOnlineEvent> read_online_events(const std::filesystem::path& path) {
  std::vector<RawOnlineEvent> out;
  for_each_line(path, [&](const Json& j) {
    out.push_back(RawOnlineEvent{j.at("user").get<UserId>(), j.at("item").get<ItemId>(),
                                 j.at("ts").get<Timestamp>(),
                                 parse_event_type(j.value("event_type", std::string("view")))});
  });
  return out;
}

std::vector<RawStoreTransaction> read_store_transactions(const std::filesystem::path& path) {
  std::vector<RawStoreTransaction> out;
  for_each_line(path, [&](const Json& j) {
    RawStoreTransaction t{j.at("user").get<UserId>(), j.at("items").get<std::vector<ItemId>>(),
                          j.at("ts").get<Timestamp>()};
    if (t.items.empty()) throw DataError(path.string() + ": store transaction without items");
    out.push_back(std::move(t));
  });
  return out;
}

void write_online_events(const std::filesystem::path& path,
                         std::span<const RawOnlineEvent> events) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& e : events) {
    out << Json{{"user", e.user}, {"item", e.item}, {"ts", e.ts},
                {"event_type", to_string(e.event_type)}}
               .dump()
        << '\n';
  }
}

void write_store_transactions(const std::filesystem::path& path,
                              std::span<const RawStoreTransaction> txns) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& t : txns) {
    out << Json{{"user", t.user}, {"items", t.items}, {"ts", t.ts}}.dump() << '\n';
  }
}

}  // namespace omniseq
