#include "sceneminer/representation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "sceneminer/errors.hpp"
#include "sceneminer/ranking.hpp"

namespace sceneminer {

using nlohmann::json;

ActivityWordSet activity_word_set(const std::vector<double>& phi_k, double word_cutoff,
                                  int activity_id) {
    if (phi_k.empty()) throw DataError("activity_word_set: empty distribution");
    double sum = 0.0;
    for (double p : phi_k) {
        if (p < 0.0 || !std::isfinite(p))
            throw DataError("activity_word_set: probabilities must be finite and >= 0");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw DataError("activity_word_set: distribution does not sum to 1");

    ActivityWordSet set;
    set.activity_id = activity_id;
    set.words = select_by_cumulative_share(phi_k, word_cutoff);
    for (int w : set.words) set.covered_mass += phi_k[w];
    std::sort(set.words.begin(), set.words.end());
    return set;
}

std::vector<ActivityWordSet> typical_word_sets(const ActivityModel& model,
                                               double word_cutoff) {
    std::vector<ActivityWordSet> sets;
    sets.reserve(model.typical.size());
    for (int id : model.typical)
        sets.push_back(activity_word_set(model.phi[id], word_cutoff, id));
    return sets;
}

ClipFeature clip_feature(const ClipDocument& clip,
                         const std::vector<ActivityWordSet>& word_sets) {
    ClipFeature feat;
    feat.clip_id = clip.clip_id;
    feat.c.assign(word_sets.size(), 0.0);
    feat.n_words = static_cast<std::int64_t>(clip.words.size());
    if (clip.words.empty()) return feat;

    std::vector<std::int64_t> hits(word_sets.size(), 0);
    for (int w : clip.words) {
        bool assigned = false;
        for (std::size_t k = 0; k < word_sets.size(); ++k) {
            if (std::binary_search(word_sets[k].words.begin(), word_sets[k].words.end(), w)) {
                ++hits[k];
                assigned = true;
            }
        }
        if (!assigned) {
            ++feat.n_unassigned;
            feat.unassigned_words.push_back(w);
        }
    }
    for (std::size_t k = 0; k < word_sets.size(); ++k)
        feat.c[k] = static_cast<double>(hits[k]) / static_cast<double>(feat.n_words);

    std::sort(feat.unassigned_words.begin(), feat.unassigned_words.end());
    feat.unassigned_words.erase(
        std::unique(feat.unassigned_words.begin(), feat.unassigned_words.end()),
        feat.unassigned_words.end());
    return feat;
}

TrainingSet build_training_set(const Corpus& corpus, const ActivityModel& activities,
                               const StateModel& states, double word_cutoff) {
    if (states.state_seq.size() != corpus.clips.size())
        throw DataError("build_training_set: state sequence length (" +
                        std::to_string(states.state_seq.size()) +
                        ") does not match corpus clip count (" +
                        std::to_string(corpus.clips.size()) + ")");

    const auto sets = typical_word_sets(activities, word_cutoff);
    std::vector<bool> is_typical(states.n_states, false);
    for (int s : states.typical) is_typical[s] = true;

    TrainingSet out;
    for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
        const int label = states.state_seq[i];
        if (!is_typical[label]) {
            ++out.dropped;
            continue;
        }
        out.features.push_back(clip_feature(corpus.clips[i], sets));
        out.labels.push_back(label);
    }
    return out;
}

void save_features(const FeatureFile& file, const std::string& path,
                   const std::string& config_hash) {
    if (file.features.size() != file.labels.size())
        throw DataError("save_features: feature/label count mismatch");
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("save_features: cannot open " + path);

    json word_sets = json::array();
    for (const auto& s : file.word_sets)
        word_sets.push_back({{"activity_id", s.activity_id},
                             {"words", s.words},
                             {"covered_mass", s.covered_mass}});
    json header = {{"schema", "features/1"},
                   {"config_hash", config_hash},
                   {"activities", file.activities},
                   {"word_sets", word_sets}};
    f << header.dump() << '\n';

    for (std::size_t i = 0; i < file.features.size(); ++i) {
        const auto& ft = file.features[i];
        json line = {{"clip_id", ft.clip_id},
                     {"c", ft.c},
                     {"n_words", ft.n_words},
                     {"n_unassigned", ft.n_unassigned}};
        if (file.labels[i].has_value())
            line["label"] = *file.labels[i];
        else
            line["label"] = nullptr;
        f << line.dump() << '\n';
    }
    if (!f) throw DataError("save_features: write failed for " + path);
}

FeatureFile load_features(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("load_features: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw DataError("load_features: empty file " + path);

    FeatureFile out;
    try {
        json header = json::parse(line);
        if (header.at("schema").get<std::string>() != "features/1")
            throw DataError("load_features: unsupported schema in " + path);
        out.activities = header.at("activities").get<std::vector<int>>();
        for (const auto& s : header.at("word_sets")) {
            ActivityWordSet set;
            set.activity_id = s.at("activity_id").get<int>();
            set.words = s.at("words").get<std::vector<int>>();
            set.covered_mass = s.at("covered_mass").get<double>();
            out.word_sets.push_back(std::move(set));
        }
    } catch (const json::exception& e) {
        throw DataError("load_features: bad header line 1 of " + path + ": " + e.what());
    }

    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            ClipFeature ft;
            ft.clip_id = j.at("clip_id").get<std::int64_t>();
            ft.c = j.at("c").get<std::vector<double>>();
            ft.n_words = j.at("n_words").get<std::int64_t>();
            ft.n_unassigned = j.at("n_unassigned").get<std::int64_t>();
            if (ft.c.size() != out.activities.size())
                throw DataError("load_features: feature width mismatch at line " +
                                std::to_string(line_no));
            out.features.push_back(std::move(ft));
            const auto& lbl = j.at("label");
            out.labels.push_back(lbl.is_null() ? std::optional<int>{}
                                               : std::optional<int>{lbl.get<int>()});
        } catch (const json::exception& e) {
            throw DataError("load_features: malformed line " + std::to_string(line_no) +
                            " of " + path + ": " + e.what());
        }
    }
    return out;
}

}  // namespace sceneminer
