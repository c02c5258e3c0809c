#include "sceneminer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "sceneminer/errors.hpp"

namespace sceneminer {

using nlohmann::json;

std::vector<int> hungarian_max_assignment(const std::vector<std::vector<double>>& score) {
    if (score.empty()) return {};
    const int rows = static_cast<int>(score.size());
    const int cols = static_cast<int>(score[0].size());
    for (const auto& r : score)
        if (static_cast<int>(r.size()) != cols)
            throw DataError("hungarian_max_assignment: ragged score matrix");

    // pad to square and convert to min-cost
    const int n = std::max(rows, cols);
    double max_val = 0.0;
    for (const auto& r : score)
        for (double v : r) max_val = std::max(max_val, v);
    std::vector<std::vector<double>> cost(n + 1, std::vector<double>(n + 1, 0.0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            cost[i + 1][j + 1] =
                (i < rows && j < cols) ? max_val - score[i][j] : max_val;

    // assignment via shortest augmenting paths with potentials
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
        std::vector<char> used(n + 1, false);
        do {
            used[j0] = true;
            const int i0 = p[j0];
            double delta = std::numeric_limits<double>::infinity();
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0][j] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> row_to_col(rows, -1);
    for (int j = 1; j <= n; ++j) {
        const int i = p[j];
        if (i >= 1 && i <= rows && j <= cols) row_to_col[i - 1] = j - 1;
    }
    return row_to_col;
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DataError("cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

}  // namespace

std::vector<TopicMatch> match_topics(const std::vector<std::vector<double>>& learned,
                                     const std::vector<std::vector<double>>& planted) {
    std::vector<TopicMatch> matches(planted.size());
    for (std::size_t p = 0; p < planted.size(); ++p) matches[p].planted_id = static_cast<int>(p);
    if (learned.empty() || planted.empty()) return matches;

    std::vector<std::vector<double>> cos(planted.size(), std::vector<double>(learned.size()));
    for (std::size_t p = 0; p < planted.size(); ++p)
        for (std::size_t l = 0; l < learned.size(); ++l)
            cos[p][l] = cosine(planted[p], learned[l]);

    std::vector<bool> p_used(planted.size(), false), l_used(learned.size(), false);
    const std::size_t n_pairs = std::min(planted.size(), learned.size());
    for (std::size_t round = 0; round < n_pairs; ++round) {
        double best = -1.0;
        int bp = -1, bl = -1;
        for (std::size_t p = 0; p < planted.size(); ++p) {
            if (p_used[p]) continue;
            for (std::size_t l = 0; l < learned.size(); ++l) {
                if (l_used[l]) continue;
                if (cos[p][l] > best) {
                    best = cos[p][l];
                    bp = static_cast<int>(p);
                    bl = static_cast<int>(l);
                }
            }
        }
        p_used[bp] = true;
        l_used[bl] = true;
        matches[bp].learned_id = bl;
        matches[bp].cosine = best;
    }
    return matches;
}

EvalReport evaluate(const std::vector<std::pair<std::int64_t, int>>& pred_labels,
                    const GroundTruth& gt, const std::vector<AnomalyEvent>& events) {
    EvalReport report;
    report.n_test_clips = static_cast<std::int64_t>(pred_labels.size());

    // --- label accuracy after optimal alignment
    std::set<int> gt_set, pred_set;
    for (const auto& [clip_id, label] : pred_labels) {
        if (clip_id < 0 || clip_id >= static_cast<std::int64_t>(gt.state_seq.size()))
            throw DataError("evaluate: predicted clip " + std::to_string(clip_id) +
                            " has no ground-truth entry (length mismatch)");
        gt_set.insert(gt.state_seq[clip_id]);
        pred_set.insert(label);
    }

    if (!pred_labels.empty()) {
        report.gt_classes.assign(gt_set.begin(), gt_set.end());
        std::vector<int> pred_classes(pred_set.begin(), pred_set.end());
        std::map<int, int> gt_pos, pred_pos;
        for (std::size_t i = 0; i < report.gt_classes.size(); ++i)
            gt_pos[report.gt_classes[i]] = static_cast<int>(i);
        for (std::size_t i = 0; i < pred_classes.size(); ++i)
            pred_pos[pred_classes[i]] = static_cast<int>(i);

        std::vector<std::vector<double>> overlap(
            pred_classes.size(), std::vector<double>(report.gt_classes.size(), 0.0));
        for (const auto& [clip_id, label] : pred_labels)
            overlap[pred_pos[label]][gt_pos[gt.state_seq[clip_id]]] += 1.0;

        const std::vector<int> pred_to_gt = hungarian_max_assignment(overlap);

        const std::size_t g = report.gt_classes.size();
        report.confusion.assign(g, std::vector<std::int64_t>(g + 1, 0));
        std::int64_t correct = 0;
        for (const auto& [clip_id, label] : pred_labels) {
            const int row = gt_pos[gt.state_seq[clip_id]];
            const int mapped = pred_to_gt[pred_pos[label]];
            if (mapped >= 0 && mapped < static_cast<int>(g)) {
                ++report.confusion[row][mapped];
                if (mapped == row) ++correct;
            } else {
                ++report.confusion[row][g];  // prediction outside the aligned classes
            }
        }
        report.overall_accuracy =
            static_cast<double>(correct) / static_cast<double>(pred_labels.size());
        report.per_class_accuracy.assign(g, 0.0);
        double acc_sum = 0.0;
        for (std::size_t r = 0; r < g; ++r) {
            std::int64_t row_sum = 0;
            for (std::size_t c = 0; c <= g; ++c) row_sum += report.confusion[r][c];
            report.per_class_accuracy[r] =
                row_sum > 0 ? static_cast<double>(report.confusion[r][r]) / row_sum : 0.0;
            acc_sum += report.per_class_accuracy[r];
        }
        report.average_accuracy = acc_sum / static_cast<double>(g);
    }

    // --- event-level anomaly scoring
    std::int64_t matched = 0;
    for (const auto& truth : gt.anomalies) {
        bool hit = false;
        for (const auto& ev : events) {
            if (ev.kind == truth.kind && ev.clip_id >= truth.span_begin &&
                ev.clip_id <= truth.span_end) {
                hit = true;
                break;
            }
        }
        if (hit) ++matched;
    }
    report.tpr = gt.anomalies.empty()
                     ? 1.0
                     : static_cast<double>(matched) / static_cast<double>(gt.anomalies.size());

    auto covered = [&](std::int64_t clip_id) {
        for (const auto& truth : gt.anomalies)
            if (clip_id >= truth.span_begin && clip_id <= truth.span_end) return true;
        return false;
    };
    std::set<std::int64_t> false_clip_ids;
    for (const auto& ev : events)
        if (!covered(ev.clip_id)) false_clip_ids.insert(ev.clip_id);
    report.false_clips = static_cast<std::int64_t>(false_clip_ids.size());
    report.fpr = report.n_test_clips > 0
                     ? static_cast<double>(report.false_clips) /
                           static_cast<double>(report.n_test_clips)
                     : 0.0;
    return report;
}

void save_report(const EvalReport& report, const std::string& path,
                 const std::string& config_hash) {
    json matches = json::array();
    for (const auto& m : report.topic_matches)
        matches.push_back({{"planted_id", m.planted_id},
                           {"learned_id", m.learned_id},
                           {"cosine", m.cosine}});
    json j = {{"schema", "report/1"},
              {"config_hash", config_hash},
              {"gt_classes", report.gt_classes},
              {"confusion", report.confusion},
              {"per_class_accuracy", report.per_class_accuracy},
              {"average_accuracy", report.average_accuracy},
              {"overall_accuracy", report.overall_accuracy},
              {"tpr", report.tpr},
              {"fpr", report.fpr},
              {"false_clips", report.false_clips},
              {"n_test_clips", report.n_test_clips},
              {"topic_matches", matches}};
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("save_report: cannot open " + path);
    f << j.dump(2) << '\n';
    if (!f) throw DataError("save_report: write failed for " + path);
}

}  // namespace sceneminer
