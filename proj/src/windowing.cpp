#include "omniseq/windowing.hpp"

#include <algorithm>
#include <string>

namespace omniseq {

std::string_view to_string(EventType t) {
  switch (t) {
    case EventType::kView: return "view";
    case EventType::kClick: return "click";
    case EventType::kAddToCart: return "add_to_cart";
    case EventType::kPurchase: return "purchase";
  }
  return "view";
}

EventType parse_event_type(std::string_view s) {
  if (s == "view") return EventType::kView;
  if (s == "click") return EventType::kClick;
  if (s == "add_to_cart") return EventType::kAddToCart;
  if (s == "purchase") return EventType::kPurchase;
  throw DataError("unknown event_type '" + std::string(s) + "'");
}

void WindowConfig::validate() const {
  if (window_duration <= 0 || slide_duration <= 0) {
    throw ConfigError("window and slide durations must be positive");
  }
  if (slide_duration > window_duration) {
    throw ConfigError("slide duration must not exceed window duration");
  }
  if (window_duration % slide_duration != 0) {
    throw ConfigError("window duration must be a multiple of the slide duration");
  }
}

namespace {

Timestamp floor_to(Timestamp t, Timestamp step) {
  Timestamp q = t / step;
  if (t % step != 0 && t < 0) --q;
  return q * step;
}

}  // namespace

std::vector<Timestamp> assign_windows(Timestamp ts, const WindowConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.windows_per_event();
  const Timestamp last = floor_to(ts, cfg.slide_duration);
  std::vector<Timestamp> starts(n);
  for (std::size_t k = 0; k < n; ++k) {
    starts[n - 1 - k] = last - static_cast<Timestamp>(k) * cfg.slide_duration;
  }
  return starts;
}

UserGroups aggregate_window(std::span<const RawOnlineEvent> events, Timestamp window_start,
                            const WindowConfig& cfg) {
  const Timestamp end = window_start + cfg.window_duration;
  UserGroups groups;
  for (const auto& e : events) {
    if (e.ts < window_start || e.ts >= end) {
      throw DataError("event at t=" + std::to_string(e.ts) + " lies outside window [" +
                      std::to_string(window_start) + ", " + std::to_string(end) + ")");
    }
    groups[e.user].push_back(e);
  }
  for (auto& [user, group] : groups) {
    std::stable_sort(group.begin(), group.end(), [](const auto& a, const auto& b) {
      if (a.ts != b.ts) return a.ts < b.ts;
      if (a.item != b.item) return a.item < b.item;
      return a.event_type < b.event_type;
    });
  }
  return groups;
}

JoinResult join_online_instore(const UserGroups& online,
                               std::span<const RawStoreTransaction> store_batch,
                               Timestamp window_start, const WindowConfig& cfg) {
  const Timestamp end = window_start + cfg.window_duration;
  std::map<UserId, std::vector<BehaviorEvent>> per_user;
  for (const auto& [user, group] : online) {
    auto& out = per_user[user];
    for (const auto& e : group) out.push_back(BehaviorEvent::online(e.user, e.ts, e.item));
  }
  JoinResult result;
  for (const auto& txn : store_batch) {
    if (txn.ts >= end) {
      result.deferred.push_back(txn);
      continue;
    }
    per_user[txn.user].push_back(BehaviorEvent::in_store(txn.user, txn.ts, txn.items));
  }
  for (auto& [user, events] : per_user) {
    std::sort(events.begin(), events.end(), event_order);
    for (auto& e : events) result.events.push_back(std::move(e));
  }
  return result;
}

}  // namespace omniseq
