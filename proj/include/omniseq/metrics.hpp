#pragma once

#include <cstddef>
#include <span>

namespace omniseq {

// 1-based rank of scores[target] with pessimistic ties: every other candidate
// scoring at least as high is placed ahead of the target.
int rank_target(std::span<const double> scores, std::size_t target);

int hit_at_k(int rank, int k = 10);

// Single relevant item, so the ideal DCG is 1: 1/log2(rank + 1) within the
// cutoff, 0 beyond it.
double ndcg_at_k(int rank, int k = 10);

}  // namespace omniseq
