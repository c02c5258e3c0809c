#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace sceneminer {

struct FusionConfig {
    double beta_weight = 0.1;  // transition energy weight
    double prob_floor = 1e-6;  // keeps the log terms finite

    void validate() const;
};

// Energy of candidate state `cand` for the current clip given the previous
// fused state. `p` is the class distribution in class order and `trans` is
// the transition matrix restricted to the same classes, trans(to, from).
// A self transition carries no transition term; an improbable transition
// raises the energy.
double state_energy(const Eigen::VectorXd& p, int prev, int cand,
                    const Eigen::MatrixXd& trans, const FusionConfig& cfg);

// Energy-minimizing class index; with no predecessor the plain argmax of
// `p`. Ties break toward the lower class index.
int fuse_classify(const Eigen::VectorXd& p, std::optional<int> prev,
                  const Eigen::MatrixXd& trans, const FusionConfig& cfg);

}  // namespace sceneminer
