#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "omniseq/registry.hpp"

namespace omniseq {

class NotFoundError : public DataError {
 public:
  using DataError::DataError;
};

// Latest-wins key-value cache keyed by (user, schema name). Ordering is by
// as_of, not insertion order.
class OnlineCache {
 public:
  void put(FeatureRecord record);
  // Throws NotFoundError when absent.
  FeatureRecord get(UserId user, const std::string& schema) const;
  std::optional<FeatureRecord> find(UserId user, const std::string& schema) const;
  // Every cached record of `schema`, ordered by user.
  std::vector<FeatureRecord> records(const std::string& schema) const;
  std::size_t size() const;

 private:
  mutable std::shared_mutex mu_;
  std::map<std::pair<UserId, std::string>, FeatureRecord> entries_;
};

// Append-only on-disk store: <root>/<schema>/<version>/part-NNNNN, one
// newline-delimited JSON record per line. Survives process restarts since
// every scan reads from disk.
class OfflineStore {
 public:
  explicit OfflineStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  // Writes one part per (schema, version) present in `records`, at the next
  // free part index. Existing parts are never rewritten.
  void append(std::span<const FeatureRecord> records);
  void append(std::span<const FeatureRecord> records, std::size_t part_index);

  // Records of `schema` (all versions) with begin <= as_of < end, sorted by
  // (user, as_of, version).
  std::vector<FeatureRecord> scan(const std::string& schema, Timestamp begin, Timestamp end) const;
  std::vector<FeatureRecord> scan_all(const std::string& schema) const;

 private:
  std::size_t next_part_index() const;

  std::filesystem::path root_;
  mutable std::mutex write_mu_;
};

}  // namespace omniseq
