#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sceneminer/anomaly.hpp"
#include "sceneminer/fusion.hpp"
#include "sceneminer/gp.hpp"
#include "sceneminer/hdp.hpp"
#include "sceneminer/hdp_hmm.hpp"
#include "sceneminer/representation.hpp"

namespace sceneminer {

// FNV-1a over the canonical dump; identifies the effective configuration
// in every output file.
std::string config_hash(const nlohmann::json& config);

struct PipelineConfig {
    std::string out_dir = ".";
    std::string mode = "batch";  // or "stream"
    int train_clips = 500;

    // exactly one input source
    std::string scene_spec_path;  // simulate
    std::string corpus_path;      // precomputed corpus
    std::string flow_dir;         // quantize

    // quantize options
    int cell_size = 8;
    double threshold = 1.0;
    int clip_frames = 75;

    std::string truth_path;  // enables the evaluate stage

    HdpHyperParams hdp;
    HdpHyperParams hmm;

    double word_cutoff = 0.9;
    double activity_cutoff = 0.99;
    double state_cutoff = 0.99;

    std::string gp_kernel = "ard";
    bool gp_optimize = true;
    double gp_signal_sigma = 1.0;
    double gp_length_scale = 1.0;
    double gp_noise_sigma = 0.1;

    FusionConfig fusion;
    AnomalyThresholds anomaly;

    std::uint64_t seed = 7;

    static PipelineConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void validate() const;
};

// Per-clip label record emitted by classification.
struct LabelRecord {
    std::int64_t clip_id = 0;
    std::vector<double> gp_probs;  // class order
    int label = -1;                // fused state id
    std::vector<double> energies;  // class order; empty for the first clip
};

void save_labels(const std::vector<LabelRecord>& labels, const std::vector<int>& classes,
                 const std::string& path, const std::string& config_hash = "");
std::vector<LabelRecord> load_labels(const std::string& path,
                                     std::vector<int>* classes = nullptr);

// Sequential classify + detect over one clip stream. Holds the trained
// models immutably; the only mutable state is the previous fused label.
class StreamProcessor {
public:
    StreamProcessor(const GpMulticlass& gp, const StateModel& states,
                    const std::vector<GpRegressor>& regressors,
                    const std::vector<ActivityWordSet>& word_sets, const GridSpec& grid,
                    const FusionConfig& fusion, const AnomalyThresholds& thresholds);

    struct ClipResult {
        LabelRecord label;
        std::vector<AnomalyEvent> events;
    };

    // `run_detectors` false gives the pure classification path.
    ClipResult process(const ClipDocument& clip, const ClipFeature& feature,
                       bool run_detectors = true);

    void reset() { prev_.reset(); }
    const std::vector<int>& classes() const { return gp_->classes(); }

private:
    const GpMulticlass* gp_;
    const StateModel* states_;
    const std::vector<GpRegressor>* regressors_;
    const std::vector<ActivityWordSet>* word_sets_;
    GridSpec grid_;
    FusionConfig fusion_;
    AnomalyThresholds thresholds_;
    Eigen::MatrixXd class_trans_;  // transition restricted to classes, (to, from)
    std::optional<int> prev_;      // class index of the previous fused label
};

// Runs all stages in dependency order; a stage is skipped when its outputs
// are newer than its inputs unless `force`. Returns the process exit code.
int run_pipeline(const PipelineConfig& config, bool force, std::ostream& log);

}  // namespace sceneminer
