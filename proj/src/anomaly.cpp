#include "sceneminer/anomaly.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "sceneminer/errors.hpp"

namespace sceneminer {

using nlohmann::json;

void AnomalyThresholds::validate() const {
    if (rare_word_count < 0)
        throw DataError("AnomalyThresholds: rare_word_count must be >= 0");
    if (!(transition_floor > 0.0) || !(transition_floor < 1.0))
        throw DataError("AnomalyThresholds: transition_floor must be in (0, 1)");
    if (!(conflict_z > 0.0))
        throw DataError("AnomalyThresholds: conflict_z must be positive");
}

const char* anomaly_kind_name(AnomalyKind kind) {
    switch (kind) {
        case AnomalyKind::RareMotion: return "rare_motion";
        case AnomalyKind::ConflictingActivity: return "conflicting_activity";
        case AnomalyKind::IllegalTransition: return "illegal_transition";
    }
    return "unknown";
}

AnomalyKind anomaly_kind_from_name(const std::string& name) {
    if (name == "rare_motion") return AnomalyKind::RareMotion;
    if (name == "conflicting_activity") return AnomalyKind::ConflictingActivity;
    if (name == "illegal_transition") return AnomalyKind::IllegalTransition;
    throw DataError("unknown anomaly kind '" + name + "'");
}

std::vector<CellIndex> localize(const std::vector<int>& words, const GridSpec& grid) {
    std::vector<CellIndex> cells;
    cells.reserve(words.size());
    for (int w : words) {
        const auto d = grid.decode_word(w);  // throws on out-of-range
        cells.push_back({d.cell_x, d.cell_y});
    }
    std::sort(cells.begin(), cells.end());
    cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
    return cells;
}

std::optional<AnomalyEvent> detect_rare_motions(const ClipDocument& clip,
                                                const ClipFeature& feature,
                                                const GridSpec& grid,
                                                const AnomalyThresholds& th) {
    th.validate();
    if (feature.clip_id != clip.clip_id)
        throw DataError("detect_rare_motions: feature does not match clip");
    if (feature.n_unassigned <= th.rare_word_count) return std::nullopt;

    AnomalyEvent ev;
    ev.clip_id = clip.clip_id;
    ev.kind = AnomalyKind::RareMotion;
    ev.score = static_cast<double>(feature.n_unassigned);
    ev.locations = localize(feature.unassigned_words, grid);
    return ev;
}

bool conflict_exceeds(double observed, double mu, double sigma, double z) {
    return observed > mu + z * sigma;
}

std::vector<AnomalyEvent> detect_conflicts(const ClipDocument& clip,
                                           const ClipFeature& feature,
                                           const std::vector<ActivityWordSet>& word_sets,
                                           const std::vector<GpRegressor>& regressors,
                                           const GridSpec& grid,
                                           const AnomalyThresholds& th) {
    th.validate();
    const std::size_t k = feature.c.size();
    if (regressors.size() != k)
        throw DataError("detect_conflicts: expected " + std::to_string(k) +
                        " regressors, got " + std::to_string(regressors.size()));
    if (word_sets.size() != k)
        throw DataError("detect_conflicts: word set count mismatch");

    std::vector<AnomalyEvent> events;
    Eigen::VectorXd rest(static_cast<Eigen::Index>(k) - 1);
    for (std::size_t i = 0; i < k; ++i) {
        Eigen::Index r = 0;
        for (std::size_t j = 0; j < k; ++j)
            if (j != i) rest(r++) = feature.c[j];
        const auto pred = regressors[i].predict(rest);
        const double sigma = std::max(pred.sigma_obs, 1e-12);
        if (!conflict_exceeds(feature.c[i], pred.mu, sigma, th.conflict_z)) continue;

        AnomalyEvent ev;
        ev.clip_id = clip.clip_id;
        ev.kind = AnomalyKind::ConflictingActivity;
        ev.score = (feature.c[i] - pred.mu) / sigma;
        ev.detail = {word_sets[i].activity_id};

        std::vector<int> involved;
        for (int w : clip.words)
            if (std::binary_search(word_sets[i].words.begin(), word_sets[i].words.end(), w))
                involved.push_back(w);
        ev.locations = localize(involved, grid);
        events.push_back(std::move(ev));
    }
    return events;
}

std::optional<AnomalyEvent> detect_illegal_transition(std::int64_t clip_id, int prev_state,
                                                      int cur_state, const StateModel& model,
                                                      const AnomalyThresholds& th) {
    th.validate();
    if (prev_state == cur_state) return std::nullopt;
    const double m = transition_prob(model, prev_state, cur_state);
    if (m >= th.transition_floor) return std::nullopt;

    AnomalyEvent ev;
    ev.clip_id = clip_id;
    ev.kind = AnomalyKind::IllegalTransition;
    ev.score = -std::log(std::max(m, 1e-300));
    ev.detail = {prev_state, cur_state};
    return ev;
}

void save_anomaly_events(const std::vector<AnomalyEvent>& events, const std::string& path,
                         const std::string& config_hash) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("save_anomaly_events: cannot open " + path);
    json header = {{"schema", "anomalies/1"}, {"config_hash", config_hash}};
    f << header.dump() << '\n';
    for (const auto& ev : events) {
        json cells = json::array();
        for (const auto& c : ev.locations) cells.push_back({c.x, c.y});
        json line = {{"clip_id", ev.clip_id},
                     {"kind", anomaly_kind_name(ev.kind)},
                     {"score", ev.score},
                     {"locations", cells},
                     {"detail", ev.detail}};
        f << line.dump() << '\n';
    }
    if (!f) throw DataError("save_anomaly_events: write failed for " + path);
}

std::vector<AnomalyEvent> load_anomaly_events(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("load_anomaly_events: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw DataError("load_anomaly_events: empty file " + path);
    try {
        json header = json::parse(line);
        if (header.at("schema").get<std::string>() != "anomalies/1")
            throw DataError("load_anomaly_events: unsupported schema in " + path);
    } catch (const json::exception& e) {
        throw DataError("load_anomaly_events: bad header in " + path + ": " + e.what());
    }

    std::vector<AnomalyEvent> events;
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            AnomalyEvent ev;
            ev.clip_id = j.at("clip_id").get<std::int64_t>();
            ev.kind = anomaly_kind_from_name(j.at("kind").get<std::string>());
            ev.score = j.at("score").get<double>();
            for (const auto& c : j.at("locations"))
                ev.locations.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
            ev.detail = j.at("detail").get<std::vector<int>>();
            events.push_back(std::move(ev));
        } catch (const json::exception& e) {
            throw DataError("load_anomaly_events: malformed line " + std::to_string(line_no) +
                            " of " + path + ": " + e.what());
        }
    }
    return events;
}

}  // namespace sceneminer
