#include "sceneminer/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sceneminer/errors.hpp"

namespace sceneminer {

std::vector<int> select_by_cumulative_share(const std::vector<double>& weights,
                                            double cutoff) {
    if (weights.empty()) throw DataError("select_by_cumulative_share: empty weight list");
    if (!(cutoff > 0.0) || cutoff > 1.0)
        throw DataError("select_by_cumulative_share: cutoff must be in (0, 1]");

    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0 || !std::isfinite(w))
            throw DataError("select_by_cumulative_share: weights must be finite and >= 0");
        total += w;
    }
    if (total <= 0.0) throw DataError("select_by_cumulative_share: all weights are zero");

    std::vector<int> order(weights.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (weights[a] != weights[b]) return weights[a] > weights[b];
        return a < b;
    });

    // Accumulate raw weights and divide once so that integer counts give
    // exact shares; the boundary case cum/total == cutoff is included.
    std::vector<int> picked;
    double cum = 0.0;
    for (int id : order) {
        if (weights[id] <= 0.0) break;  // zero-weight entries are never representative
        cum += weights[id];
        if (picked.empty() || cum / total <= cutoff + 1e-12) {
            picked.push_back(id);
        } else {
            break;
        }
    }
    return picked;
}

}  // namespace sceneminer
