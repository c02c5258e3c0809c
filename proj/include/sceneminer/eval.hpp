#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sceneminer/anomaly.hpp"
#include "sceneminer/hdp.hpp"
#include "sceneminer/synth.hpp"

namespace sceneminer {

// Maximum-total-score assignment (Hungarian algorithm). Returns, for each
// row, the matched column or -1; rectangular inputs are padded internally.
std::vector<int> hungarian_max_assignment(const std::vector<std::vector<double>>& score);

struct TopicMatch {
    int planted_id = -1;
    int learned_id = -1;
    double cosine = 0.0;
};

// Greedy max-cosine matching without replacement between learned and
// planted word distributions. Unmatched planted topics get learned_id -1
// and cosine 0.
std::vector<TopicMatch> match_topics(const std::vector<std::vector<double>>& learned,
                                     const std::vector<std::vector<double>>& planted);

struct EvalReport {
    // rows: ground-truth states; columns: mapped predictions, last column
    // collects predictions whose label matched no ground-truth state
    std::vector<std::vector<std::int64_t>> confusion;
    std::vector<int> gt_classes;
    std::vector<double> per_class_accuracy;
    double average_accuracy = 0.0;  // mean of per-class accuracies
    double overall_accuracy = 0.0;  // trace / total
    double tpr = 0.0;               // matched ground-truth events / all events
    double fpr = 0.0;               // falsely detected clips / test clips
    std::int64_t false_clips = 0;
    std::int64_t n_test_clips = 0;
    std::vector<TopicMatch> topic_matches;  // optional, filled by the caller
};

// Scores predicted labels against the ground truth after optimal label
// alignment, and anomaly events at event level (one per ground-truth
// event, however many clips it spans). Every predicted clip id must have
// a ground-truth entry.
EvalReport evaluate(const std::vector<std::pair<std::int64_t, int>>& pred_labels,
                    const GroundTruth& gt, const std::vector<AnomalyEvent>& events);

void save_report(const EvalReport& report, const std::string& path,
                 const std::string& config_hash = "");

}  // namespace sceneminer
