#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sceneminer/anomaly.hpp"
#include "sceneminer/codebook.hpp"

namespace sceneminer {

// A planted activity: a distribution over a word support.
struct PlantedActivity {
    std::vector<int> words;
    std::vector<double> probs;  // same length, sums to 1

    std::vector<double> dense(int codebook_size) const;
};

// Generator description for a synthetic scene: states cycle through a
// Markov chain, each state mixes planted activities, each token is drawn
// from the mixed activity (or uniformly at the noise rate).
struct SceneSpec {
    GridSpec grid;
    int clip_length = 75;
    std::vector<PlantedActivity> activities;
    std::vector<std::vector<double>> state_mixtures;  // per state, over activities
    std::vector<std::vector<double>> transition;      // [from][to], rows sum to 1
    int n_clips = 0;
    int tokens_per_clip = 0;
    double noise_rate = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct GtAnomaly {
    std::int64_t clip_id = 0;
    AnomalyKind kind = AnomalyKind::RareMotion;
    std::vector<CellIndex> cells;
    std::int64_t span_begin = 0;  // clips affected by the event, inclusive
    std::int64_t span_end = 0;
    int detail = -1;  // injected activity or state id
};

struct GroundTruth {
    std::vector<int> state_seq;                  // per clip
    std::vector<std::vector<double>> mixtures;   // per clip, over activities
    std::vector<GtAnomaly> anomalies;
};

std::pair<Corpus, GroundTruth> generate(const SceneSpec& spec);

struct InjectionRequest {
    std::int64_t clip_id = 0;
    AnomalyKind kind = AnomalyKind::RareMotion;
    int amount = -1;  // token count for rare/conflict; target state for illegal (-1 = default)
};

// Plants anomalies into an existing corpus: rare motion replaces tokens
// with words outside every activity support; a conflict adds tokens from
// an activity foreign to the clip's state; an illegal transition rewrites
// the clip's state to an unreachable successor and regenerates its bag.
std::pair<Corpus, GroundTruth> inject_anomalies(const Corpus& corpus,
                                                const GroundTruth& gt,
                                                const SceneSpec& spec,
                                                const std::vector<InjectionRequest>& plan,
                                                std::uint64_t seed);

// Desk-scale reference scene: a 45x36-cell grid, 6 lane-like activities,
// 4 cycling states with self-loop 0.9, 1000 clips of 300 tokens, 2% noise.
SceneSpec default_scene_spec();

void save_scene_spec(const SceneSpec& spec, const std::string& path);
SceneSpec load_scene_spec(const std::string& path);

void save_ground_truth(const GroundTruth& gt, const std::string& path,
                       const std::string& config_hash = "");
GroundTruth load_ground_truth(const std::string& path);

}  // namespace sceneminer
