#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "omniseq/domain.hpp"
#include "omniseq/rng.hpp"

using namespace omniseq;

namespace {

constexpr Catalog kCat{100};

std::vector<ItemId> ids(const HybridSequence& s) {
  std::vector<ItemId> out;
  for (const auto& t : s.tokens) out.push_back(t.id);
  return out;
}

}  // namespace

TEST(BuildSequence, CollapsesSetsInTimeOrder) {
  const std::vector<BehaviorEvent> events = {
      BehaviorEvent::online(1, 30, 3),
      BehaviorEvent::in_store(1, 20, {7, 2}),
      BehaviorEvent::online(1, 10, 5),
  };
  const auto seq = build_hybrid_sequence(events, 90, kCat);
  EXPECT_EQ(ids(seq), (std::vector<ItemId>{5, kCat.special_token(), 3}));
  EXPECT_EQ(seq.tokens[1].meta, (std::vector<ItemId>{2, 7}));
  EXPECT_EQ(seq.tokens[1].channel, Channel::kInStore);
  EXPECT_TRUE(seq.tokens[0].meta.empty());
  EXPECT_EQ(seq.tokens[2].timestamp, 30);
}

TEST(BuildSequence, SingleEvent) {
  const std::vector<BehaviorEvent> events = {BehaviorEvent::online(1, 1, 4)};
  EXPECT_EQ(ids(build_hybrid_sequence(events, 90, kCat)), std::vector<ItemId>{4});
}

TEST(BuildSequence, TruncationKeepsMostRecent) {
  std::vector<BehaviorEvent> events;
  for (int i = 0; i < 5; ++i) events.push_back(BehaviorEvent::online(1, 100 - i, 10 + i));
  const auto seq = build_hybrid_sequence(events, 3, kCat);
  // Timestamps 98, 99, 100 belong to items 12, 11, 10.
  EXPECT_EQ(ids(seq), (std::vector<ItemId>{12, 11, 10}));
}

TEST(BuildSequence, TieBreakOnlineFirstThenItemId) {
  const std::vector<BehaviorEvent> events = {
      BehaviorEvent::in_store(1, 5, {1}),
      BehaviorEvent::online(1, 5, 9),
      BehaviorEvent::online(1, 5, 4),
  };
  const auto seq = build_hybrid_sequence(events, 90, kCat);
  EXPECT_EQ(ids(seq), (std::vector<ItemId>{4, 9, kCat.special_token()}));
}

TEST(BuildSequence, EmptyInputThrows) {
  EXPECT_THROW(build_hybrid_sequence({}, 90, kCat), EmptySequenceError);
}

TEST(BuildSequence, DuplicatesCollapse) {
  const std::vector<BehaviorEvent> events = {
      BehaviorEvent::online(1, 5, 9),          BehaviorEvent::online(1, 5, 9),
      BehaviorEvent::in_store(1, 6, {3, 2}),   BehaviorEvent::in_store(1, 6, {2, 3, 3}),
  };
  const auto seq = build_hybrid_sequence(events, 90, kCat);
  EXPECT_EQ(seq.size(), 2u);
}

TEST(BuildSequence, InvariantUnderInputPermutation) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<BehaviorEvent> events;
    std::uniform_int_distribution<int> item(0, kCat.size - 1), ts(0, 20);
    for (int i = 0; i < 15; ++i) {
      if (rng() % 3 == 0) {
        events.push_back(BehaviorEvent::in_store(1, ts(rng), {item(rng), item(rng)}));
      } else {
        events.push_back(BehaviorEvent::online(1, ts(rng), item(rng)));
      }
    }
    const auto ref = build_hybrid_sequence(events, 10, kCat);
    std::shuffle(events.begin(), events.end(), rng);
    EXPECT_EQ(build_hybrid_sequence(events, 10, kCat), ref);
    EXPECT_LE(ref.size(), 10u);
    for (std::size_t i = 1; i < ref.size(); ++i) {
      EXPECT_LE(ref.tokens[i - 1].timestamp, ref.tokens[i].timestamp);
    }
  }
}

TEST(BehaviorEventTest, InStoreRejectsEmptySet) {
  EXPECT_THROW(BehaviorEvent::in_store(1, 1, {}), DataError);
}

TEST(BehaviorEventTest, InStoreSortsAndDedupes) {
  EXPECT_EQ(BehaviorEvent::in_store(1, 1, {5, 1, 5, 3}).items, (std::vector<ItemId>{1, 3, 5}));
}

TEST(Flatten, ExpandsInAscendingOrder) {
  const std::vector<BehaviorEvent> events = {
      BehaviorEvent::online(1, 1, 5),
      BehaviorEvent::in_store(1, 2, {7, 2}),
      BehaviorEvent::online(1, 3, 3),
  };
  const auto flat = flatten_sequence(build_hybrid_sequence(events, 90, kCat));
  EXPECT_EQ(ids(flat), (std::vector<ItemId>{5, 2, 7, 3}));
  EXPECT_EQ(flat.tokens[1].timestamp, 2);
  EXPECT_EQ(flat.tokens[2].timestamp, 2);
  EXPECT_EQ(flat.tokens[1].channel, Channel::kInStore);
}

TEST(Flatten, NoSpecialTokensIsIdentity) {
  const std::vector<BehaviorEvent> events = {BehaviorEvent::online(1, 1, 5),
                                             BehaviorEvent::online(1, 2, 6)};
  const auto seq = build_hybrid_sequence(events, 90, kCat);
  EXPECT_EQ(flatten_sequence(seq), seq);
}

TEST(Flatten, Singleton) {
  const std::vector<BehaviorEvent> events = {BehaviorEvent::in_store(1, 1, {9})};
  EXPECT_EQ(ids(flatten_sequence(build_hybrid_sequence(events, 90, kCat))), std::vector<ItemId>{9});
}

TEST(Flatten, RetruncatesAndPreservesItemMultiset) {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<BehaviorEvent> events;
    std::uniform_int_distribution<int> item(0, kCat.size - 1);
    for (int i = 0; i < 12; ++i) {
      if (i % 3 == 1) {
        events.push_back(BehaviorEvent::in_store(1, i, {item(rng), item(rng), item(rng)}));
      } else {
        events.push_back(BehaviorEvent::online(1, i, item(rng)));
      }
    }
    const auto seq = build_hybrid_sequence(events, 90, kCat);
    const auto flat = flatten_sequence(seq);
    std::vector<ItemId> expected;
    for (const auto& t : seq.tokens) {
      if (seq.is_special(t)) {
        expected.insert(expected.end(), t.meta.begin(), t.meta.end());
      } else {
        expected.push_back(t.id);
      }
    }
    auto got = ids(flat);
    EXPECT_EQ(std::count(got.begin(), got.end(), kCat.special_token()), 0);
    std::sort(got.begin(), got.end());
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(got, expected);

    auto short_seq = seq;
    short_seq.max_seq_len = 5;
    const auto short_flat = flatten_sequence(short_seq);
    ASSERT_EQ(short_flat.size(), 5u);
    EXPECT_TRUE(std::equal(short_flat.tokens.begin(), short_flat.tokens.end(), flat.tokens.end() - 5));
  }
}

TEST(DropInStore, KeepsOnlineOnly) {
  const std::vector<BehaviorEvent> events = {
      BehaviorEvent::online(1, 1, 5),
      BehaviorEvent::in_store(1, 2, {7, 2}),
      BehaviorEvent::online(1, 3, 3),
  };
  EXPECT_EQ(ids(drop_in_store(build_hybrid_sequence(events, 90, kCat))), (std::vector<ItemId>{5, 3}));
}

TEST(InteractedItems, UnionOfItemsAndMembers) {
  const std::vector<BehaviorEvent> events = {
      BehaviorEvent::online(1, 1, 5),
      BehaviorEvent::in_store(1, 2, {7, 2}),
      BehaviorEvent::online(1, 3, 7),
  };
  EXPECT_EQ(interacted_items(build_hybrid_sequence(events, 90, kCat)), (std::vector<ItemId>{2, 5, 7}));
}
