#include "omniseq/stores.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>

namespace omniseq {

namespace fs = std::filesystem;

void OnlineCache::put(FeatureRecord record) {
  std::unique_lock lock(mu_);
  auto key = std::make_pair(record.user, record.schema);
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    entries_.emplace(std::move(key), std::move(record));
  } else if (record.as_of >= it->second.as_of) {
    it->second = std::move(record);
  }
}

std::optional<FeatureRecord> OnlineCache::find(UserId user, const std::string& schema) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find({user, schema});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

FeatureRecord OnlineCache::get(UserId user, const std::string& schema) const {
  auto r = find(user, schema);
  if (!r) {
    throw NotFoundError("no online record for user " + std::to_string(user) + " schema '" +
                        schema + "'");
  }
  return *std::move(r);
}

std::vector<FeatureRecord> OnlineCache::records(const std::string& schema) const {
  std::shared_lock lock(mu_);
  std::vector<FeatureRecord> out;
  for (const auto& [key, record] : entries_) {
    if (key.second == schema) out.push_back(record);
  }
  return out;
}

std::size_t OnlineCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

OfflineStore::OfflineStore(fs::path root) : root_(std::move(root)) {}

namespace {

std::string part_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "part-%05zu", index);
  return buf;
}

std::optional<std::size_t> parse_part_index(const fs::path& p) {
  const std::string name = p.filename().string();
  if (name.rfind("part-", 0) != 0) return std::nullopt;
  try {
    return static_cast<std::size_t>(std::stoull(name.substr(5)));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

template <typename Fn>
void for_each_part(const fs::path& dir, Fn&& fn) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return;
  std::vector<fs::path> versions;
  for (const auto& v : fs::directory_iterator(dir)) {
    if (v.is_directory()) versions.push_back(v.path());
  }
  std::sort(versions.begin(), versions.end());
  for (const auto& v : versions) {
    std::vector<fs::path> parts;
    for (const auto& p : fs::directory_iterator(v)) {
      if (p.is_regular_file() && parse_part_index(p.path())) parts.push_back(p.path());
    }
    std::sort(parts.begin(), parts.end());
    for (const auto& p : parts) fn(p);
  }
}

}  // namespace

std::size_t OfflineStore::next_part_index() const {
  std::size_t next = 0;
  std::error_code ec;
  if (!fs::is_directory(root_, ec)) return 0;
  for (const auto& schema : fs::directory_iterator(root_)) {
    if (!schema.is_directory()) continue;
    for_each_part(schema.path(), [&](const fs::path& p) {
      next = std::max(next, *parse_part_index(p) + 1);
    });
  }
  return next;
}

void OfflineStore::append(std::span<const FeatureRecord> records) {
  std::size_t index;
  {
    std::scoped_lock lock(write_mu_);
    index = next_part_index();
  }
  append(records, index);
}

void OfflineStore::append(std::span<const FeatureRecord> records, std::size_t part_index) {
  std::scoped_lock lock(write_mu_);
  std::map<std::pair<std::string, int>, std::vector<const FeatureRecord*>> partitions;
  for (const auto& r : records) partitions[{r.schema, r.version}].push_back(&r);
  for (const auto& [key, recs] : partitions) {
    const fs::path dir = root_ / key.first / std::to_string(key.second);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create offline partition " + dir.string() + ": " + ec.message());
    const fs::path file = dir / part_name(part_index);
    if (fs::exists(file)) throw DataError("offline part already exists: " + file.string());
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError("cannot write offline part " + file.string());
    for (const FeatureRecord* r : recs) out << to_json(*r).dump() << '\n';
    out.flush();
    if (!out) throw DataError("failed writing offline part " + file.string());
  }
}

std::vector<FeatureRecord> OfflineStore::scan(const std::string& schema, Timestamp begin,
                                              Timestamp end) const {
  std::vector<FeatureRecord> out;
  for_each_part(root_ / schema, [&](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read offline part " + p.string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      Json j;
      try {
        j = Json::parse(line);
      } catch (const Json::exception& e) {
        throw DataError("corrupt line in " + p.string() + ": " + e.what());
      }
      FeatureRecord r = record_from_json(j);
      if (r.as_of >= begin && r.as_of < end) out.push_back(std::move(r));
    }
  });
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.user != b.user) return a.user < b.user;
    if (a.as_of != b.as_of) return a.as_of < b.as_of;
    return a.version < b.version;
  });
  return out;
}

std::vector<FeatureRecord> OfflineStore::scan_all(const std::string& schema) const {
  return scan(schema, std::numeric_limits<Timestamp>::min(), std::numeric_limits<Timestamp>::max());
}

}  // namespace omniseq
