#include "omniseq/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <tuple>

#include "omniseq/pipeline.hpp"
#include "omniseq/rng.hpp"

namespace omniseq {

void GenConfig::validate() const {
  if (users < 1 || catalog_size < 1 || intents < 1 || items_per_intent < 1 || min_behaviors < 1 ||
      set_size_max < 1) {
    throw ConfigError("generator counts must be positive");
  }
  if (static_cast<long long>(intents) * items_per_intent > catalog_size) {
    throw ConfigError("intents * items_per_intent exceeds the catalog size");
  }
  for (double f : {instore_fraction, rho, stay_prob}) {
    if (f < 0.0 || f > 1.0) throw ConfigError("generator probabilities must lie in [0, 1]");
  }
  if (set_size_mean < 1.0 || set_size_mean > (set_size_max + 1) / 2.0) {
    throw ConfigError("set_size_mean must lie in [1, (set_size_max + 1) / 2]");
  }
  if (set_size_max > catalog_size) throw ConfigError("set_size_max exceeds the catalog size");
  if (!(mean_gap_secs > 0.0)) throw ConfigError("mean_gap_secs must be positive");
}

Json to_json(const GenConfig& c) {
  return Json{{"users", c.users},
              {"catalog_size", c.catalog_size},
              {"intents", c.intents},
              {"items_per_intent", c.items_per_intent},
              {"min_behaviors", c.min_behaviors},
              {"instore_fraction", c.instore_fraction},
              {"mean_length", c.mean_length},
              {"set_size_mean", c.set_size_mean},
              {"set_size_max", c.set_size_max},
              {"rho", c.rho},
              {"stay_prob", c.stay_prob},
              {"start_time", c.start_time},
              {"mean_gap_secs", c.mean_gap_secs},
              {"seed", c.seed}};
}

GenConfig gen_config_from_json(const Json& j) {
  GenConfig c;
  try {
    c.users = j.value("users", c.users);
    c.catalog_size = j.value("catalog_size", c.catalog_size);
    c.intents = j.value("intents", c.intents);
    c.items_per_intent = j.value("items_per_intent", c.items_per_intent);
    c.min_behaviors = j.value("min_behaviors", c.min_behaviors);
    c.instore_fraction = j.value("instore_fraction", c.instore_fraction);
    c.mean_length = j.value("mean_length", c.mean_length);
    c.set_size_mean = j.value("set_size_mean", c.set_size_mean);
    c.set_size_max = j.value("set_size_max", c.set_size_max);
    c.rho = j.value("rho", c.rho);
    c.stay_prob = j.value("stay_prob", c.stay_prob);
    c.start_time = j.value("start_time", c.start_time);
    c.mean_gap_secs = j.value("mean_gap_secs", c.mean_gap_secs);
    c.seed = j.value("seed", c.seed);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad generator config: ") + e.what());
  }
  return c;
}

namespace {

// Weights q^(k-1) for k = 1..max, with q chosen by bisection so the mean
// matches the target.
std::vector<double> set_size_weights(double mean, int max) {
  auto weights = [max](double q) {
    std::vector<double> w(static_cast<std::size_t>(max));
    double x = 1.0;
    for (auto& v : w) {
      v = x;
      x *= q;
    }
    return w;
  };
  auto mean_of = [](const std::vector<double>& w) {
    double z = 0.0;
    double m = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      z += w[k];
      m += static_cast<double>(k + 1) * w[k];
    }
    return m / z;
  };
  double lo = 0.0;
  double hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (mean_of(weights(mid)) < mean ? lo : hi) = mid;
  }
  return weights(0.5 * (lo + hi));
}

}  // namespace

Corpus generate(const GenConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  corpus.config = cfg;
  corpus.item_intent.assign(static_cast<std::size_t>(cfg.catalog_size), -1);
  for (int k = 0; k < cfg.intents; ++k) {
    for (int i = 0; i < cfg.items_per_intent; ++i) {
      corpus.item_intent[static_cast<std::size_t>(k * cfg.items_per_intent + i)] = k;
    }
  }

  const auto size_weights = set_size_weights(cfg.set_size_mean, cfg.set_size_max);
  const double extra_mean = std::max(0.0, cfg.mean_length - cfg.min_behaviors);
  constexpr EventType kTypes[] = {EventType::kView, EventType::kClick, EventType::kAddToCart,
                                  EventType::kPurchase};

  for (int u = 0; u < cfg.users; ++u) {
    const auto user = static_cast<UserId>(u);
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(u)));
    std::uniform_int_distribution<int> any_intent(0, cfg.intents - 1);
    std::uniform_int_distribution<int> other_intent(0, std::max(0, cfg.intents - 2));
    std::uniform_int_distribution<int> within(0, cfg.items_per_intent - 1);
    std::uniform_int_distribution<ItemId> any_item(0, cfg.catalog_size - 1);
    std::uniform_int_distribution<int> event_type(0, 3);
    std::bernoulli_distribution in_store(cfg.instore_fraction);
    std::bernoulli_distribution from_intent(cfg.rho);
    std::bernoulli_distribution stay(cfg.stay_prob);
    std::discrete_distribution<int> set_size(size_weights.begin(), size_weights.end());
    std::exponential_distribution<double> gap(1.0 / cfg.mean_gap_secs);
    std::uniform_int_distribution<Timestamp> offset(0, 30 * 86400);

    int length = cfg.min_behaviors;
    if (extra_mean > 0.0) length += std::poisson_distribution<int>(extra_mean)(rng);

    UserTruth truth{user, {}, {}};
    int intent = any_intent(rng);
    Timestamp ts = cfg.start_time + offset(rng);
    for (int b = 0; b < length; ++b) {
      truth.intents.push_back(intent);
      const int base = intent * cfg.items_per_intent;
      if (in_store(rng)) {
        const int n = set_size(rng) + 1;
        std::vector<ItemId> items;
        int attempts = 0;
        while (static_cast<int>(items.size()) < n) {
          const bool use_intent = from_intent(rng) && attempts < 1000;
          const ItemId id = use_intent ? base + within(rng) : any_item(rng);
          ++attempts;
          if (std::find(items.begin(), items.end(), id) == items.end()) items.push_back(id);
        }
        std::sort(items.begin(), items.end());
        corpus.store.push_back(RawStoreTransaction{user, std::move(items), ts});
        truth.channels.push_back(Channel::kInStore);
      } else {
        corpus.online.push_back(
            RawOnlineEvent{user, base + within(rng), ts, kTypes[event_type(rng)]});
        truth.channels.push_back(Channel::kOnline);
      }
      if (cfg.intents > 1 && !stay(rng)) {
        const int next = other_intent(rng);
        intent = next >= intent ? next + 1 : next;
      }
      ts += 1 + static_cast<Timestamp>(gap(rng));
    }
    corpus.truth.push_back(std::move(truth));
  }

  std::stable_sort(corpus.online.begin(), corpus.online.end(), [](const auto& a, const auto& b) {
    return std::tie(a.ts, a.user, a.item) < std::tie(b.ts, b.user, b.item);
  });
  std::stable_sort(corpus.store.begin(), corpus.store.end(), [](const auto& a, const auto& b) {
    return std::tie(a.ts, a.user) < std::tie(b.ts, b.user);
  });
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  write_online_events(dir / "online.jsonl", corpus.online);
  write_store_transactions(dir / "store.jsonl", corpus.store);

  Json users = Json::array();
  for (const auto& t : corpus.truth) {
    Json channels = Json::array();
    for (Channel c : t.channels) channels.push_back(std::string(to_string(c)));
    users.push_back({{"user", t.user}, {"intents", t.intents}, {"channels", channels}});
  }
  const Json truth{{"config", to_json(corpus.config)},
                   {"item_intent", corpus.item_intent},
                   {"users", users}};
  std::ofstream out(dir / "ground_truth.json", std::ios::binary);
  if (!out) throw DataError("cannot write ground_truth.json in " + dir.string());
  out << truth.dump() << '\n';
}

}  // namespace omniseq
