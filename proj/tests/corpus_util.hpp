#pragma once

#include <map>
#include <vector>

#include "omniseq/domain.hpp"
#include "omniseq/synthgen.hpp"

namespace omniseq::testutil {

// Per-user hybrid sequences straight from generated events, bypassing the
// pipeline.
inline std::vector<HybridSequence> sequences_of(const Corpus& c, std::size_t max_len = 90) {
  std::map<UserId, std::vector<BehaviorEvent>> per_user;
  for (const auto& e : c.online) per_user[e.user].push_back(BehaviorEvent::online(e.user, e.ts, e.item));
  for (const auto& t : c.store) per_user[t.user].push_back(BehaviorEvent::in_store(t.user, t.ts, t.items));
  std::vector<HybridSequence> out;
  const Catalog cat{c.config.catalog_size};
  for (const auto& [u, events] : per_user) out.push_back(build_hybrid_sequence(events, max_len, cat));
  return out;
}

inline GenConfig small_gen(int users, int catalog, std::uint64_t seed) {
  GenConfig g;
  g.users = users;
  g.catalog_size = catalog;
  g.intents = 5;
  g.items_per_intent = catalog / 5;
  g.set_size_mean = 2.5;
  g.set_size_max = 4;
  g.min_behaviors = 8;
  g.mean_length = 12;
  g.seed = seed;
  return g;
}

}  // namespace omniseq::testutil
