#pragma once

#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "omniseq/domain.hpp"

namespace omniseq {

enum class EventType : std::uint8_t { kView, kClick, kAddToCart, kPurchase };

std::string_view to_string(EventType t);
EventType parse_event_type(std::string_view s);

struct RawOnlineEvent {
  UserId user = 0;
  ItemId item = 0;
  Timestamp ts = 0;
  EventType event_type = EventType::kView;

  friend bool operator==(const RawOnlineEvent&, const RawOnlineEvent&) = default;
};

struct RawStoreTransaction {
  UserId user = 0;
  std::vector<ItemId> items;
  Timestamp ts = 0;  // transaction close time

  friend bool operator==(const RawStoreTransaction&, const RawStoreTransaction&) = default;
};

// Sliding event-time windows [start, start + window_duration) whose starts are
// multiples of slide_duration.
struct WindowConfig {
  Timestamp window_duration = 600;
  Timestamp slide_duration = 300;

  void validate() const;
  std::size_t windows_per_event() const {
    return static_cast<std::size_t>(window_duration / slide_duration);
  }
};

// Ascending starts of every window containing `ts`.
std::vector<Timestamp> assign_windows(Timestamp ts, const WindowConfig& cfg);

using UserGroups = std::map<UserId, std::vector<RawOnlineEvent>>;

// Groups one window's online events by user, each group in time order.
// Throws DataError if an event lies outside [window_start, window_start + duration).
UserGroups aggregate_window(std::span<const RawOnlineEvent> events, Timestamp window_start,
                            const WindowConfig& cfg);

struct JoinResult {
  // Sorted by user, then canonical event order.
  std::vector<BehaviorEvent> events;
  // Store transactions that close at or after the window end.
  std::vector<RawStoreTransaction> deferred;
};

JoinResult join_online_instore(const UserGroups& online,
                               std::span<const RawStoreTransaction> store_batch,
                               Timestamp window_start, const WindowConfig& cfg);

}  // namespace omniseq
