#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sceneminer/codebook.hpp"
#include "sceneminer/hdp.hpp"
#include "sceneminer/hdp_hmm.hpp"

namespace sceneminer {

// Representative words of one activity: the shortest descending-probability
// prefix whose accumulated mass stays within the cutoff (top word always
// kept). `words` is sorted ascending for lookup.
struct ActivityWordSet {
    int activity_id = -1;
    std::vector<int> words;
    double covered_mass = 0.0;
};

ActivityWordSet activity_word_set(const std::vector<double>& phi_k, double word_cutoff,
                                  int activity_id = -1);

// Word sets of a model's typical activities, in typical order.
std::vector<ActivityWordSet> typical_word_sets(const ActivityModel& model,
                                               double word_cutoff = 0.9);

// Fixed-length clip descriptor: c[k] is the fraction of the clip's tokens
// whose word type falls in word set k (token-level counting; entries need
// not sum to 1 since sets may overlap).
struct ClipFeature {
    std::int64_t clip_id = 0;
    std::vector<double> c;
    std::int64_t n_words = 0;
    std::int64_t n_unassigned = 0;        // tokens outside every word set
    std::vector<int> unassigned_words;    // distinct word types, sorted
};

ClipFeature clip_feature(const ClipDocument& clip,
                         const std::vector<ActivityWordSet>& word_sets);

struct TrainingSet {
    std::vector<ClipFeature> features;
    std::vector<int> labels;  // typical state ids, aligned with features
    std::int64_t dropped = 0; // clips labeled with a non-typical state
};

// Features over the activities' typical word sets, labeled from the state
// model's sequence; clips in non-typical states are dropped.
TrainingSet build_training_set(const Corpus& corpus, const ActivityModel& activities,
                               const StateModel& states, double word_cutoff = 0.9);

// Feature file: JSON Lines with a header that carries the activity ids and
// their word sets so downstream stages are self-contained.
struct FeatureFile {
    std::vector<int> activities;              // typical activity ids, feature order
    std::vector<ActivityWordSet> word_sets;   // same order
    std::vector<ClipFeature> features;
    std::vector<std::optional<int>> labels;   // state id or nullopt per clip
};

void save_features(const FeatureFile& file, const std::string& path,
                   const std::string& config_hash = "");
FeatureFile load_features(const std::string& path);

}  // namespace sceneminer
