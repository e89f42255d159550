#include "omniseq/domain.hpp"

#include <algorithm>
#include <string>

namespace omniseq {

std::string_view to_string(Channel c) {
  return c == Channel::kOnline ? "online" : "in-store";
}

BehaviorEvent BehaviorEvent::online(UserId user, Timestamp ts, ItemId item) {
  return BehaviorEvent{user, ts, Channel::kOnline, {item}};
}

BehaviorEvent BehaviorEvent::in_store(UserId user, Timestamp ts, std::vector<ItemId> items) {
  if (items.empty()) {
    throw DataError("in-store transaction for user " + std::to_string(user) + " has no items");
  }
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  return BehaviorEvent{user, ts, Channel::kInStore, std::move(items)};
}

bool event_order(const BehaviorEvent& a, const BehaviorEvent& b) {
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  if (a.channel != b.channel) return a.channel == Channel::kOnline;
  return a.items < b.items;
}

namespace {

void check_event(const BehaviorEvent& e, Catalog catalog) {
  if (e.items.empty()) {
    throw DataError("event for user " + std::to_string(e.user) + " has an empty payload");
  }
  if (e.channel == Channel::kOnline && e.items.size() != 1) {
    throw DataError("online event must carry exactly one item");
  }
  for (ItemId id : e.items) {
    if (!catalog.contains(id)) {
      throw DataError("item " + std::to_string(id) + " is outside the catalog of size " +
                      std::to_string(catalog.size));
    }
  }
}

void truncate_front(std::vector<Token>& tokens, std::size_t max_len) {
  if (tokens.size() > max_len) {
    tokens.erase(tokens.begin(), tokens.end() - static_cast<std::ptrdiff_t>(max_len));
  }
}

}  // namespace

HybridSequence build_hybrid_sequence(std::span<const BehaviorEvent> events,
                                     std::size_t max_seq_len, Catalog catalog) {
  if (events.empty()) throw EmptySequenceError();
  if (max_seq_len == 0) throw ConfigError("max_seq_len must be at least 1");

  const UserId user = events.front().user;
  std::vector<BehaviorEvent> sorted;
  sorted.reserve(events.size());
  for (const auto& e : events) {
    if (e.user != user) throw DataError("events from several users passed to one sequence");
    check_event(e, catalog);
    BehaviorEvent copy = e;
    if (copy.channel == Channel::kInStore) {
      std::sort(copy.items.begin(), copy.items.end());
      copy.items.erase(std::unique(copy.items.begin(), copy.items.end()), copy.items.end());
    }
    sorted.push_back(std::move(copy));
  }
  std::sort(sorted.begin(), sorted.end(), event_order);
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  HybridSequence seq{user, catalog, max_seq_len, {}};
  seq.tokens.reserve(sorted.size());
  for (auto& e : sorted) {
    if (e.channel == Channel::kOnline) {
      seq.tokens.push_back(Token{e.items.front(), e.timestamp, Channel::kOnline, {}});
    } else {
      seq.tokens.push_back(
          Token{catalog.special_token(), e.timestamp, Channel::kInStore, std::move(e.items)});
    }
  }
  truncate_front(seq.tokens, max_seq_len);
  return seq;
}

HybridSequence flatten_sequence(const HybridSequence& seq) {
  HybridSequence out{seq.user, seq.catalog, seq.max_seq_len, {}};
  for (const auto& t : seq.tokens) {
    if (!seq.is_special(t)) {
      out.tokens.push_back(t);
      continue;
    }
    std::vector<ItemId> members = t.meta;
    std::sort(members.begin(), members.end());
    for (ItemId id : members) {
      out.tokens.push_back(Token{id, t.timestamp, Channel::kInStore, {}});
    }
  }
  truncate_front(out.tokens, seq.max_seq_len);
  return out;
}

HybridSequence drop_in_store(const HybridSequence& seq) {
  HybridSequence out{seq.user, seq.catalog, seq.max_seq_len, {}};
  for (const auto& t : seq.tokens) {
    if (t.channel == Channel::kOnline) out.tokens.push_back(t);
  }
  return out;
}

std::vector<ItemId> interacted_items(const HybridSequence& seq) {
  std::vector<ItemId> items;
  for (const auto& t : seq.tokens) {
    if (seq.is_special(t)) {
      items.insert(items.end(), t.meta.begin(), t.meta.end());
    } else {
      items.push_back(t.id);
    }
  }
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  return items;
}

}  // namespace omniseq
