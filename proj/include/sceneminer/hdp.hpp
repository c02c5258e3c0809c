#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sceneminer/codebook.hpp"

namespace sceneminer {

struct HdpHyperParams {
    double gamma = 2.0;  // top-level DP concentration
    double alpha = 0.5;  // per-clip (or per-row) DP concentration
    double d0 = 0.5;     // symmetric Dirichlet base for word distributions
    int n_sweeps = 1000;
    int n_burnin = 500;
    std::uint64_t seed = 0;

    void validate() const;  // throws DataError
};

// Global activity set learned from a corpus. An activity is a multinomial
// over the codebook; `typical` is the prefix of activities ranked by
// descending token share that covers 99% of the mass (first always kept).
struct ActivityModel {
    HdpHyperParams hyper;
    int codebook_size = 0;
    int n_topics = 0;
    std::vector<std::vector<double>> phi;       // n_topics x codebook_size, rows sum to 1
    std::vector<std::int64_t> counts;           // tokens per topic
    std::vector<std::vector<int>> assignments;  // per clip, topic per token (empty clips empty)
    std::vector<int> typical;                   // topic ids, descending share
    double joint_lp = 0.0;                      // score of the selected sample
};

// Direct-assignment Gibbs sampling; returns the post-burn-in sample with
// the highest joint log-probability. Deterministic given hyper.seed.
// Empty clips are skipped with a warning on stderr.
ActivityModel fit_hdp(const Corpus& corpus, const HdpHyperParams& hyper);

// Joint log-probability of the model's token assignments and the observed
// words, with topic and table structure collapsed (one table per
// clip-topic pair). Used to select the returned sample; label-symmetric.
double joint_log_prob(const ActivityModel& model, const Corpus& corpus);

std::vector<int> select_typical_activities(const std::vector<double>& counts,
                                           double cutoff = 0.99);

void save_activity_model(const ActivityModel& model, const std::string& path,
                         const std::string& config_hash = "");
ActivityModel load_activity_model(const std::string& path);

}  // namespace sceneminer
