#include "omniseq/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace omniseq {

int rank_target(std::span<const double> scores, std::size_t target) {
  if (target >= scores.size()) throw std::out_of_range("rank_target: target index out of range");
  const double t = scores[target];
  int rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i != target && scores[i] >= t) ++rank;
  }
  return rank;
}

int hit_at_k(int rank, int k) {
  if (rank < 1) throw std::invalid_argument("rank must be >= 1");
  return rank <= k ? 1 : 0;
}

double ndcg_at_k(int rank, int k) {
  if (rank < 1) throw std::invalid_argument("rank must be >= 1");
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

}  // namespace omniseq
