#pragma once

#include "condml/common.hpp"
#include "condml/rng.hpp"

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace condml {

/// Exact partition of {0, ..., n-1} into L folds with sizes differing by at
/// most one. Fold labels are 0-based.
struct FoldAssignment {
  Index n = 0;
  int num_folds = 0;
  std::vector<int> fold_of;

  FoldAssignment() = default;

  FoldAssignment(Index n_obs, int L, std::vector<int> assignment)
      : n(n_obs), num_folds(L), fold_of(std::move(assignment)) {
    if (static_cast<Index>(fold_of.size()) != n) {
      throw std::invalid_argument("fold assignment length must equal n");
    }
    std::vector<Index> counts(static_cast<std::size_t>(L), 0);
    for (int f : fold_of) {
      if (f < 0 || f >= L) throw std::invalid_argument("fold label out of range");
      ++counts[static_cast<std::size_t>(f)];
    }
    Index lo = n;
    Index hi = 0;
    for (Index c : counts) {
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
    if (hi - lo > 1) throw std::invalid_argument("fold sizes must differ by at most one");
  }

  std::vector<Index> fold_indices(int fold) const {
    std::vector<Index> out;
    for (Index i = 0; i < n; ++i) {
      if (fold_of[static_cast<std::size_t>(i)] == fold) out.push_back(i);
    }
    return out;
  }

  std::vector<Index> complement_indices(int fold) const {
    std::vector<Index> out;
    for (Index i = 0; i < n; ++i) {
      if (fold_of[static_cast<std::size_t>(i)] != fold) out.push_back(i);
    }
    return out;
  }
};

/// Balanced random partition into L folds. The remainder after integer
/// division is spread one observation per fold starting from fold 0, after a
/// seeded shuffle of the index order.
inline FoldAssignment make_folds(Index n, int L, std::uint64_t seed) {
  if (L < 2) throw std::invalid_argument("make_folds: need at least 2 folds");
  if (static_cast<Index>(L) > n) throw std::invalid_argument("make_folds: more folds than observations");

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(derive_seed(seed, 0x666f6c6473ULL));  // stream tag "folds"
  rng.shuffle(order);

  const Index base = n / L;
  const Index remainder = n % L;
  std::vector<int> fold_of(static_cast<std::size_t>(n), -1);
  std::size_t pos = 0;
  for (int f = 0; f < L; ++f) {
    const Index size = base + (static_cast<Index>(f) < remainder ? 1 : 0);
    for (Index k = 0; k < size; ++k) {
      fold_of[static_cast<std::size_t>(order[pos++])] = f;
    }
  }
  return FoldAssignment(n, L, std::move(fold_of));
}

}  // namespace condml
