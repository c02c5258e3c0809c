#pragma once

#include <vector>

namespace sceneminer {

// Ranks entries by descending weight and returns the ids of the shortest
// prefix whose cumulative share of the total stays within `cutoff`
// (boundary equality included). The top-ranked id is always kept, even if
// its share alone exceeds the cutoff. Ties in weight break by ascending id.
//
// Shared by typical-activity selection, typical-state selection and
// representative-word selection, which all use the same accumulation rule.
std::vector<int> select_by_cumulative_share(const std::vector<double>& weights,
                                            double cutoff);

}  // namespace sceneminer
