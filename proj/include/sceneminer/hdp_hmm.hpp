#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sceneminer/codebook.hpp"
#include "sceneminer/hdp.hpp"

namespace sceneminer {

// Temporal states learned over the clip sequence. Emissions are
// multinomials over the codebook; the transition matrix is stored in
// "col-from" convention: transition[i][j] = P(next = i | current = j),
// so each column sums to 1. No entry is exactly zero (MAP rows carry the
// DP prior mass).
struct StateModel {
    HdpHyperParams hyper;
    int codebook_size = 0;
    int n_states = 0;
    std::vector<std::vector<double>> emission;    // n_states x codebook_size
    std::vector<std::vector<double>> transition;  // [to][from], columns sum to 1
    std::vector<double> beta_weights;             // global state weights, sum to 1
    std::vector<int> state_seq;                   // state per training clip
    std::vector<int> typical;                     // state ids, descending clip share
    double joint_lp = 0.0;

    static constexpr const char* kConvention = "col-from";
};

// Direct-assignment Gibbs over clip states; each state is resampled
// conditioned on its neighbours and the clip's bag-of-words likelihood.
// Returns the highest-scoring post-burn-in sample. Needs >= 2 clips.
StateModel fit_hdphmm(const Corpus& corpus, const HdpHyperParams& hyper);

std::vector<int> select_typical_states(const std::vector<int>& state_seq,
                                       int n_states, double cutoff = 0.99);

// P(next = to | current = from); strictly positive.
double transition_prob(const StateModel& model, int from, int to);

// Collapsed joint score of a state sequence (transition seating collapsed
// as in the hdp module, emissions Dirichlet-multinomial). Invariant under
// consistent relabeling of states.
double state_joint_log_prob(const StateModel& model, const Corpus& corpus);

void save_state_model(const StateModel& model, const std::string& path,
                      const std::string& config_hash = "");
StateModel load_state_model(const std::string& path);

}  // namespace sceneminer
