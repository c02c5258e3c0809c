#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sceneminer/codebook.hpp"
#include "sceneminer/gp.hpp"
#include "sceneminer/hdp_hmm.hpp"
#include "sceneminer/representation.hpp"

namespace sceneminer {

struct AnomalyThresholds {
    std::int64_t rare_word_count = 50;  // unassigned-token count above which a clip is rare
    double transition_floor = 0.05;     // transitions below it are illegal
    double conflict_z = 1.96;           // one-sided bound multiplier

    void validate() const;
};

enum class AnomalyKind { RareMotion, ConflictingActivity, IllegalTransition };

const char* anomaly_kind_name(AnomalyKind kind);
AnomalyKind anomaly_kind_from_name(const std::string& name);

struct AnomalyEvent {
    std::int64_t clip_id = 0;
    AnomalyKind kind = AnomalyKind::RareMotion;
    double score = 0.0;
    std::vector<CellIndex> locations;  // empty for illegal transitions
    std::vector<int> detail;           // involved activity/state ids
};

// Fires when the clip's unassigned-token count exceeds the threshold;
// locations are the cells of the unassigned word types.
std::optional<AnomalyEvent> detect_rare_motions(const ClipDocument& clip,
                                                const ClipFeature& feature,
                                                const GridSpec& grid,
                                                const AnomalyThresholds& th);

// One-sided exceedance check used by the conflict detector; values below
// the band are not conflicts.
bool conflict_exceeds(double observed, double mu, double sigma, double z);

// One regressor per activity predicts its intersection share from the
// remaining shares; a share above mu + z * sigma is a conflict. Locations
// are the cells of the clip's tokens inside that activity's word set.
std::vector<AnomalyEvent> detect_conflicts(const ClipDocument& clip,
                                           const ClipFeature& feature,
                                           const std::vector<ActivityWordSet>& word_sets,
                                           const std::vector<GpRegressor>& regressors,
                                           const GridSpec& grid,
                                           const AnomalyThresholds& th);

// Fires when the fused state changed and the learned transition
// probability sits below the floor.
std::optional<AnomalyEvent> detect_illegal_transition(std::int64_t clip_id, int prev_state,
                                                      int cur_state, const StateModel& model,
                                                      const AnomalyThresholds& th);

// Deduplicated cells of a word set, sorted row-major.
std::vector<CellIndex> localize(const std::vector<int>& words, const GridSpec& grid);

void save_anomaly_events(const std::vector<AnomalyEvent>& events, const std::string& path,
                         const std::string& config_hash = "");
std::vector<AnomalyEvent> load_anomaly_events(const std::string& path);

}  // namespace sceneminer
