#include "sceneminer/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "sceneminer/errors.hpp"

namespace sceneminer {

using nlohmann::json;

namespace {

void check_stochastic(const std::vector<double>& v, const std::string& what) {
    if (v.empty()) throw DataError(what + ": empty distribution");
    double sum = 0.0;
    for (double p : v) {
        if (p < 0.0 || !std::isfinite(p)) throw DataError(what + ": entries must be >= 0");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw DataError(what + ": entries must sum to 1");
}

int draw_categorical(std::mt19937_64& rng, const std::vector<double>& probs) {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        u -= probs[i];
        if (u < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

}  // namespace

std::vector<double> PlantedActivity::dense(int codebook_size) const {
    std::vector<double> d(codebook_size, 0.0);
    for (std::size_t i = 0; i < words.size(); ++i) d[words[i]] += probs[i];
    return d;
}

void SceneSpec::validate() const {
    grid.validate();
    if (clip_length < 1) throw DataError("SceneSpec: clip_length must be >= 1");
    if (activities.empty()) throw DataError("SceneSpec: no activities");
    if (state_mixtures.empty()) throw DataError("SceneSpec: no states");
    if (n_clips < 1) throw DataError("SceneSpec: n_clips must be >= 1");
    if (tokens_per_clip < 1) throw DataError("SceneSpec: tokens_per_clip must be >= 1");
    if (noise_rate < 0.0 || noise_rate >= 1.0)
        throw DataError("SceneSpec: noise_rate must be in [0, 1)");

    const int vocab = grid.codebook_size();
    for (const auto& a : activities) {
        if (a.words.size() != a.probs.size() || a.words.empty())
            throw DataError("SceneSpec: activity support/probability size mismatch");
        for (int w : a.words)
            if (w < 0 || w >= vocab)
                throw DataError("SceneSpec: activity word outside the codebook");
        check_stochastic(a.probs, "SceneSpec activity");
    }
    for (const auto& mix : state_mixtures) {
        if (mix.size() != activities.size())
            throw DataError("SceneSpec: state mixture width mismatch");
        check_stochastic(mix, "SceneSpec state mixture");
    }
    if (transition.size() != state_mixtures.size())
        throw DataError("SceneSpec: transition row count mismatch");
    for (const auto& row : transition) {
        if (row.size() != state_mixtures.size())
            throw DataError("SceneSpec: transition row width mismatch");
        check_stochastic(row, "SceneSpec transition row");
    }
}

std::pair<Corpus, GroundTruth> generate(const SceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);

    Corpus corpus;
    corpus.grid = spec.grid;
    corpus.clip_length = spec.clip_length;

    GroundTruth gt;
    const int n_states = static_cast<int>(spec.state_mixtures.size());

    int state = 0;
    for (int t = 0; t < spec.n_clips; ++t) {
        if (t == 0) {
            state = static_cast<int>(rng() % n_states);
        } else {
            state = draw_categorical(rng, spec.transition[state]);
        }
        gt.state_seq.push_back(state);
        gt.mixtures.push_back(spec.state_mixtures[state]);

        ClipDocument clip;
        clip.clip_id = t;
        clip.frame_start = static_cast<std::int64_t>(t) * spec.clip_length;
        clip.frame_end = clip.frame_start + spec.clip_length;
        clip.words.reserve(spec.tokens_per_clip);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (int i = 0; i < spec.tokens_per_clip; ++i) {
            if (spec.noise_rate > 0.0 && unit(rng) < spec.noise_rate) {
                clip.words.push_back(static_cast<int>(rng() % spec.grid.codebook_size()));
                continue;
            }
            const int act = draw_categorical(rng, spec.state_mixtures[state]);
            const auto& activity = spec.activities[act];
            clip.words.push_back(activity.words[draw_categorical(rng, activity.probs)]);
        }
        corpus.clips.push_back(std::move(clip));
    }
    corpus.validate();
    return {std::move(corpus), std::move(gt)};
}

std::pair<Corpus, GroundTruth> inject_anomalies(const Corpus& corpus, const GroundTruth& gt,
                                                const SceneSpec& spec,
                                                const std::vector<InjectionRequest>& plan,
                                                std::uint64_t seed) {
    spec.validate();
    if (gt.state_seq.size() != corpus.clips.size())
        throw DataError("inject_anomalies: ground truth does not match corpus");

    Corpus out = corpus;
    GroundTruth out_gt = gt;
    std::mt19937_64 rng(seed);

    // alien vocabulary: words outside every activity support
    std::set<int> supported;
    for (const auto& a : spec.activities) supported.insert(a.words.begin(), a.words.end());

    const std::int64_t n_clips = static_cast<std::int64_t>(out.clips.size());
    const int n_states = static_cast<int>(spec.state_mixtures.size());

    for (const auto& req : plan) {
        // req.clip_id indexes by position; records carry the clip's actual id
        if (req.clip_id < 0 || req.clip_id >= n_clips)
            throw DataError("inject_anomalies: clip_id " + std::to_string(req.clip_id) +
                            " out of range");
        const std::size_t t = static_cast<std::size_t>(req.clip_id);
        auto& clip = out.clips[t];

        GtAnomaly record;
        record.clip_id = clip.clip_id;
        record.kind = req.kind;
        record.span_begin = clip.clip_id;
        record.span_end = clip.clip_id;

        switch (req.kind) {
            case AnomalyKind::RareMotion: {
                // replace a block of tokens with words never used by any activity
                const int n_tokens = req.amount > 0 ? req.amount : 80;
                if (static_cast<std::size_t>(n_tokens) > clip.words.size())
                    throw DataError("inject_anomalies: clip too small for rare injection");
                std::vector<int> alien;
                const int vocab = spec.grid.codebook_size();
                for (int probe = 0; static_cast<int>(alien.size()) < n_tokens && probe < 100000;
                     ++probe) {
                    const int w = static_cast<int>(rng() % vocab);
                    if (!supported.count(w)) alien.push_back(w);
                }
                if (static_cast<int>(alien.size()) < n_tokens)
                    throw DataError("inject_anomalies: codebook has too few unused words");
                for (int i = 0; i < n_tokens; ++i) clip.words[i] = alien[i];
                record.cells = localize(alien, spec.grid);
                break;
            }
            case AnomalyKind::ConflictingActivity: {
                // add tokens from an activity the state never mixes
                const int state = out_gt.state_seq[t];
                int foreign = -1;
                for (std::size_t a = 0; a < spec.activities.size(); ++a) {
                    if (spec.state_mixtures[state][a] == 0.0) {
                        foreign = static_cast<int>(a);
                        break;
                    }
                }
                if (foreign < 0)
                    throw DataError("inject_anomalies: state " + std::to_string(state) +
                                    " mixes every activity; no conflict possible");
                const int n_tokens = req.amount > 0 ? req.amount : 90;
                const auto& act = spec.activities[foreign];
                std::vector<int> added;
                for (int i = 0; i < n_tokens; ++i)
                    added.push_back(act.words[draw_categorical(rng, act.probs)]);
                clip.words.insert(clip.words.end(), added.begin(), added.end());
                record.cells = localize(added, spec.grid);
                record.detail = foreign;
                break;
            }
            case AnomalyKind::IllegalTransition: {
                if (t == 0)
                    throw DataError("inject_anomalies: illegal transition needs a predecessor");
                const int prev = out_gt.state_seq[t - 1];
                int target = req.amount;
                if (target < 0) {
                    // least reachable successor of the previous state
                    double best = 2.0;
                    for (int s = 0; s < n_states; ++s) {
                        if (s == prev) continue;
                        if (spec.transition[prev][s] < best) {
                            best = spec.transition[prev][s];
                            target = s;
                        }
                    }
                }
                if (target < 0 || target >= n_states)
                    throw DataError("inject_anomalies: bad target state");
                if (spec.transition[prev][target] > 0.01)
                    throw DataError("inject_anomalies: transition " + std::to_string(prev) +
                                    "->" + std::to_string(target) + " is not near-zero");

                out_gt.state_seq[t] = target;
                out_gt.mixtures[t] = spec.state_mixtures[target];
                std::vector<int> words;
                words.reserve(clip.words.size());
                std::uniform_real_distribution<double> unit(0.0, 1.0);
                for (std::size_t i = 0; i < clip.words.size(); ++i) {
                    if (spec.noise_rate > 0.0 && unit(rng) < spec.noise_rate) {
                        words.push_back(static_cast<int>(rng() % spec.grid.codebook_size()));
                        continue;
                    }
                    const int act = draw_categorical(rng, spec.state_mixtures[target]);
                    const auto& activity = spec.activities[act];
                    words.push_back(activity.words[draw_categorical(rng, activity.probs)]);
                }
                clip.words = std::move(words);
                record.detail = target;
                // the rewritten state disturbs the boundary into the next clip too
                if (req.clip_id + 1 < n_clips)
                    record.span_end = out.clips[t + 1].clip_id;
                break;
            }
        }
        out_gt.anomalies.push_back(std::move(record));
    }
    out.validate();
    return {std::move(out), std::move(out_gt)};
}

SceneSpec default_scene_spec() {
    SceneSpec spec;
    spec.grid.frame_width = 360;
    spec.grid.frame_height = 288;
    spec.grid.cell_size = 8;  // 45 x 36 cells, 12960 words
    spec.clip_length = 75;
    spec.n_clips = 1000;
    spec.tokens_per_clip = 300;
    spec.noise_rate = 0.02;
    spec.seed = 20240901;

    // Lane-like activities on disjoint cell blocks, one direction each.
    // Cell columns 40..44 stay unused so injected rare motion has
    // somewhere alien to live.
    auto block = [&](int x0, int x1, int y0, int y1, int dir) {
        PlantedActivity act;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x)
                act.words.push_back(spec.grid.encode_word(x, y, dir));
        act.probs.assign(act.words.size(), 1.0 / static_cast<double>(act.words.size()));
        return act;
    };
    spec.activities = {
        block(6, 10, 2, 34, 6),    // downward lane
        block(12, 16, 2, 34, 2),   // upward lane
        block(2, 36, 12, 16, 4),   // leftward lane
        block(2, 36, 18, 22, 0),   // rightward lane
        block(18, 26, 24, 32, 7),  // turning region
        block(28, 36, 2, 8, 1),    // crossing region
    };

    spec.state_mixtures = {
        {0.5, 0.5, 0.0, 0.0, 0.0, 0.0},   // vertical flow
        {0.0, 0.0, 0.8, 0.0, 0.0, 0.2},   // leftward flow
        {0.0, 0.0, 0.0, 0.8, 0.0, 0.2},   // rightward flow
        {0.15, 0.15, 0.0, 0.0, 0.7, 0.0}, // turning interlude
    };

    spec.transition = {
        {0.9, 0.1, 0.0, 0.0},
        {0.0, 0.9, 0.1, 0.0},
        {0.0, 0.0, 0.9, 0.1},
        {0.1, 0.0, 0.0, 0.9},
    };
    return spec;
}

void save_scene_spec(const SceneSpec& spec, const std::string& path) {
    spec.validate();
    json acts = json::array();
    for (const auto& a : spec.activities)
        acts.push_back({{"words", a.words}, {"probs", a.probs}});
    json j = {
        {"schema", "scene/1"},
        {"grid",
         {{"frame_width", spec.grid.frame_width},
          {"frame_height", spec.grid.frame_height},
          {"cell_size", spec.grid.cell_size},
          {"n_directions", spec.grid.n_directions},
          {"magnitude_threshold", spec.grid.magnitude_threshold}}},
        {"clip_length", spec.clip_length},
        {"activities", acts},
        {"state_mixtures", spec.state_mixtures},
        {"transition", spec.transition},
        {"n_clips", spec.n_clips},
        {"tokens_per_clip", spec.tokens_per_clip},
        {"noise_rate", spec.noise_rate},
        {"seed", spec.seed},
    };
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("save_scene_spec: cannot open " + path);
    f << j.dump(2) << '\n';
    if (!f) throw DataError("save_scene_spec: write failed for " + path);
}

SceneSpec load_scene_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("load_scene_spec: cannot open " + path);
    SceneSpec spec;
    try {
        json j = json::parse(f);
        if (j.at("schema").get<std::string>() != "scene/1")
            throw DataError("load_scene_spec: unsupported schema in " + path);
        const auto& g = j.at("grid");
        spec.grid.frame_width = g.at("frame_width").get<int>();
        spec.grid.frame_height = g.at("frame_height").get<int>();
        spec.grid.cell_size = g.at("cell_size").get<int>();
        spec.grid.n_directions = g.at("n_directions").get<int>();
        spec.grid.magnitude_threshold = g.value("magnitude_threshold", 1.0);
        spec.clip_length = j.at("clip_length").get<int>();
        for (const auto& a : j.at("activities")) {
            PlantedActivity act;
            act.words = a.at("words").get<std::vector<int>>();
            act.probs = a.at("probs").get<std::vector<double>>();
            spec.activities.push_back(std::move(act));
        }
        spec.state_mixtures = j.at("state_mixtures").get<std::vector<std::vector<double>>>();
        spec.transition = j.at("transition").get<std::vector<std::vector<double>>>();
        spec.n_clips = j.at("n_clips").get<int>();
        spec.tokens_per_clip = j.at("tokens_per_clip").get<int>();
        spec.noise_rate = j.at("noise_rate").get<double>();
        spec.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw DataError("load_scene_spec: malformed " + path + ": " + e.what());
    }
    spec.validate();
    return spec;
}

void save_ground_truth(const GroundTruth& gt, const std::string& path,
                       const std::string& config_hash) {
    json anomalies = json::array();
    for (const auto& a : gt.anomalies) {
        json cells = json::array();
        for (const auto& c : a.cells) cells.push_back({c.x, c.y});
        anomalies.push_back({{"clip_id", a.clip_id},
                             {"kind", anomaly_kind_name(a.kind)},
                             {"cells", cells},
                             {"span", {a.span_begin, a.span_end}},
                             {"detail", a.detail}});
    }
    json j = {{"schema", "gt/1"},
              {"config_hash", config_hash},
              {"state_seq", gt.state_seq},
              {"mixtures", gt.mixtures},
              {"anomalies", anomalies}};
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("save_ground_truth: cannot open " + path);
    f << j.dump() << '\n';
    if (!f) throw DataError("save_ground_truth: write failed for " + path);
}

GroundTruth load_ground_truth(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("load_ground_truth: cannot open " + path);
    GroundTruth gt;
    try {
        json j = json::parse(f);
        if (j.at("schema").get<std::string>() != "gt/1")
            throw DataError("load_ground_truth: unsupported schema in " + path);
        gt.state_seq = j.at("state_seq").get<std::vector<int>>();
        gt.mixtures = j.at("mixtures").get<std::vector<std::vector<double>>>();
        for (const auto& a : j.at("anomalies")) {
            GtAnomaly an;
            an.clip_id = a.at("clip_id").get<std::int64_t>();
            an.kind = anomaly_kind_from_name(a.at("kind").get<std::string>());
            for (const auto& c : a.at("cells"))
                an.cells.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
            an.span_begin = a.at("span").at(0).get<std::int64_t>();
            an.span_end = a.at("span").at(1).get<std::int64_t>();
            an.detail = a.at("detail").get<int>();
            gt.anomalies.push_back(std::move(an));
        }
    } catch (const json::exception& e) {
        throw DataError("load_ground_truth: malformed " + path + ": " + e.what());
    }
    return gt;
}

}  // namespace sceneminer
