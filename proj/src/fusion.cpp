#include "sceneminer/fusion.hpp"

#include <cmath>

#include "sceneminer/errors.hpp"

namespace sceneminer {

void FusionConfig::validate() const {
    if (beta_weight < 0.0 || !std::isfinite(beta_weight))
        throw DataError("FusionConfig: beta_weight must be >= 0");
    if (!(prob_floor > 0.0))
        throw DataError("FusionConfig: prob_floor must be positive");
}

double state_energy(const Eigen::VectorXd& p, int prev, int cand,
                    const Eigen::MatrixXd& trans, const FusionConfig& cfg) {
    cfg.validate();
    const int n = static_cast<int>(p.size());
    if (cand < 0 || cand >= n || prev < 0 || prev >= n)
        throw DataError("state_energy: state index out of range");
    if (trans.rows() != n || trans.cols() != n)
        throw DataError("state_energy: transition matrix shape mismatch");

    double e = -std::log(std::max(p(cand), cfg.prob_floor));
    if (cand != prev)
        e -= cfg.beta_weight * std::log(std::max(trans(cand, prev), cfg.prob_floor));
    return e;
}

int fuse_classify(const Eigen::VectorXd& p, std::optional<int> prev,
                  const Eigen::MatrixXd& trans, const FusionConfig& cfg) {
    cfg.validate();
    if (p.size() == 0) throw DataError("fuse_classify: empty distribution");

    if (!prev.has_value()) {
        Eigen::Index best = 0;
        p.maxCoeff(&best);
        return static_cast<int>(best);
    }

    int best = 0;
    double best_e = state_energy(p, *prev, 0, trans, cfg);
    for (int cand = 1; cand < p.size(); ++cand) {
        const double e = state_energy(p, *prev, cand, trans, cfg);
        if (e < best_e) {
            best = cand;
            best_e = e;
        }
    }
    return best;
}

}  // namespace sceneminer
