#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "omniseq/errors.hpp"

namespace omniseq {

using UserId = std::int64_t;
using Timestamp = std::int64_t;  // seconds since epoch

// Index into the item catalog.
using ItemId = std::int32_t;

// The catalog holds ids [0, size). Id `size` is reserved as the special token
// that stands in for an in-store item set inside a sequence.
struct Catalog {
  std::int32_t size = 0;

  ItemId special_token() const { return size; }
  bool contains(ItemId id) const { return id >= 0 && id < size; }
  friend bool operator==(const Catalog&, const Catalog&) = default;
};

enum class Channel : std::uint8_t { kOnline, kInStore };

std::string_view to_string(Channel c);

// One element of a user's behavior history: a single online interaction or an
// in-store transaction (a set of items sharing one timestamp).
struct BehaviorEvent {
  UserId user = 0;
  Timestamp timestamp = 0;
  Channel channel = Channel::kOnline;
  // One item for kOnline; ascending, duplicate-free, non-empty for kInStore.
  std::vector<ItemId> items;

  static BehaviorEvent online(UserId user, Timestamp ts, ItemId item);
  // Sorts and collapses repeated items (quantity > 1) into one member.
  static BehaviorEvent in_store(UserId user, Timestamp ts, std::vector<ItemId> items);

  friend bool operator==(const BehaviorEvent&, const BehaviorEvent&) = default;
};

// Canonical ordering: timestamp, then Online before InStore, then item ids.
bool event_order(const BehaviorEvent& a, const BehaviorEvent& b);

struct Token {
  ItemId id = 0;
  Timestamp timestamp = 0;
  Channel channel = Channel::kOnline;
  // Member items when `id` is the special token, empty otherwise.
  std::vector<ItemId> meta;

  friend bool operator==(const Token&, const Token&) = default;
};

struct HybridSequence {
  UserId user = 0;
  Catalog catalog;
  std::size_t max_seq_len = 0;
  std::vector<Token> tokens;

  bool is_special(const Token& t) const { return t.id == catalog.special_token(); }
  std::size_t size() const { return tokens.size(); }

  friend bool operator==(const HybridSequence&, const HybridSequence&) = default;
};

class EmptySequenceError : public DataError {
 public:
  EmptySequenceError() : DataError("cannot build a sequence from zero events") {}
};

// Sorts a single user's events, collapses each in-store transaction into one
// special-token position and keeps the most recent `max_seq_len` tokens.
// Events with identical (timestamp, channel, payload) are deduplicated.
HybridSequence build_hybrid_sequence(std::span<const BehaviorEvent> events,
                                     std::size_t max_seq_len, Catalog catalog);

// Expands every special token in place into its members (ascending id, shared
// timestamp, channel kInStore) and re-truncates to seq.max_seq_len.
HybridSequence flatten_sequence(const HybridSequence& seq);

// Drops all in-store positions, leaving the pure online sequence.
HybridSequence drop_in_store(const HybridSequence& seq);

// Every item id the user touched: online items plus set members, ascending.
std::vector<ItemId> interacted_items(const HybridSequence& seq);

}  // namespace omniseq
