#pragma once

// Internal helpers shared by the hdp and hdp_hmm samplers.

#include <cmath>
#include <random>
#include <vector>

namespace sceneminer::detail {

// Cached lgamma(n + shift) for non-negative integer n. Gibbs scoring
// evaluates these with a handful of distinct shifts and n bounded by the
// corpus size, so a growable table removes lgamma from the hot path.
class LgammaShiftTable {
public:
    explicit LgammaShiftTable(double shift = 0.0) : shift_(shift) {}

    void reset(double shift) {
        shift_ = shift;
        vals_.clear();
    }

    double operator()(std::size_t n) {
        if (n >= vals_.size()) grow(n);
        return vals_[n];
    }

private:
    void grow(std::size_t n) {
        std::size_t old = vals_.size();
        vals_.resize(std::max(n + 1, old * 2 + 16));
        for (std::size_t i = old; i < vals_.size(); ++i)
            vals_[i] = std::lgamma(static_cast<double>(i) + shift_);
    }

    double shift_ = 0.0;
    std::vector<double> vals_;
};

inline double rising_factorial_log(LgammaShiftTable& lg_shift, double /*a*/, std::size_t n) {
    // log Gamma(a+n) - log Gamma(a), with lg_shift built around shift a.
    return lg_shift(n) - lg_shift(0);
}

inline double draw_uniform(std::mt19937_64& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double draw_gamma(std::mt19937_64& rng, double shape) {
    return std::gamma_distribution<double>(shape, 1.0)(rng);
}

inline double draw_beta(std::mt19937_64& rng, double a, double b) {
    double x = draw_gamma(rng, a);
    double y = draw_gamma(rng, b);
    return x / (x + y);
}

// Number of tables in a Chinese restaurant with n customers and
// concentration a (Antoniak draw).
inline int draw_table_count(std::mt19937_64& rng, double a, long long n) {
    int m = 0;
    for (long long j = 0; j < n; ++j)
        if (draw_uniform(rng) < a / (a + static_cast<double>(j))) ++m;
    return m;
}

}  // namespace sceneminer::detail
