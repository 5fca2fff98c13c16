#pragma once

#include "nbi/core.hpp"

#include <vector>

namespace nbi {

using LabelVector = std::vector<Index>;

/// Adjusted Rand index (Hubert-Arabie) from the contingency table. Counts are
/// combined in exact integer arithmetic and divided once, so the result is
/// exactly symmetric and label-permutation invariant. Two identical trivial
/// partitions (one cluster, or all singletons) score 1; one cluster against
/// several scores 0.
double ari(const LabelVector& a, const LabelVector& b);

/// Mutual information over the arithmetic mean of the two entropies (nats).
/// Identical partitions score exactly 1; if either entropy is 0 and the
/// partitions differ, 0.
double nmi(const LabelVector& a, const LabelVector& b);

}  // namespace nbi
