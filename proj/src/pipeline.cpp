#include "sceneminer/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "sceneminer/errors.hpp"
#include "sceneminer/eval.hpp"
#include "sceneminer/synth.hpp"

namespace sceneminer {

namespace fs = std::filesystem;
using nlohmann::json;

std::string config_hash(const json& config) {
    const std::string dump = config.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig c;
    if (j.value("schema", "pipeline/1") != "pipeline/1")
        throw DataError("PipelineConfig: unsupported schema");
    c.out_dir = j.value("out_dir", c.out_dir);
    c.mode = j.value("mode", c.mode);
    c.train_clips = j.value("train_clips", c.train_clips);
    c.seed = j.value("seed", c.seed);

    if (j.contains("input")) {
        const auto& in = j.at("input");
        c.scene_spec_path = in.value("scene_spec", "");
        c.corpus_path = in.value("corpus", "");
        c.flow_dir = in.value("flow_dir", "");
        c.cell_size = in.value("cell_size", c.cell_size);
        c.threshold = in.value("threshold", c.threshold);
        c.clip_frames = in.value("clip_frames", c.clip_frames);
    }
    c.truth_path = j.value("truth", "");

    auto read_hyper = [&](const char* key, HdpHyperParams& h, std::uint64_t default_seed) {
        h.seed = default_seed;
        if (!j.contains(key)) return;
        const auto& s = j.at(key);
        h.gamma = s.value("gamma", h.gamma);
        h.alpha = s.value("alpha", h.alpha);
        h.d0 = s.value("d0", h.d0);
        h.n_sweeps = s.value("sweeps", h.n_sweeps);
        h.n_burnin = s.value("burnin", h.n_burnin);
        h.seed = s.value("seed", h.seed);
    };
    read_hyper("hdp", c.hdp, c.seed);
    read_hyper("hmm", c.hmm, c.seed + 1);

    if (j.contains("representation")) {
        const auto& r = j.at("representation");
        c.word_cutoff = r.value("word_cutoff", c.word_cutoff);
        c.activity_cutoff = r.value("activity_cutoff", c.activity_cutoff);
        c.state_cutoff = r.value("state_cutoff", c.state_cutoff);
    }
    if (j.contains("gp")) {
        const auto& g = j.at("gp");
        c.gp_kernel = g.value("kernel", c.gp_kernel);
        c.gp_optimize = g.value("optimize", c.gp_optimize);
        c.gp_signal_sigma = g.value("signal_sigma", c.gp_signal_sigma);
        c.gp_length_scale = g.value("length_scale", c.gp_length_scale);
        c.gp_noise_sigma = g.value("noise_sigma", c.gp_noise_sigma);
    }
    if (j.contains("fusion")) {
        const auto& f = j.at("fusion");
        c.fusion.beta_weight = f.value("beta", c.fusion.beta_weight);
        c.fusion.prob_floor = f.value("prob_floor", c.fusion.prob_floor);
    }
    if (j.contains("anomaly")) {
        const auto& a = j.at("anomaly");
        c.anomaly.rare_word_count = a.value("th_rare", c.anomaly.rare_word_count);
        c.anomaly.transition_floor = a.value("th_trans", c.anomaly.transition_floor);
    }
    c.validate();
    return c;
}

json PipelineConfig::to_json() const {
    return json{
        {"schema", "pipeline/1"},
        {"out_dir", out_dir},
        {"mode", mode},
        {"train_clips", train_clips},
        {"seed", seed},
        {"input",
         {{"scene_spec", scene_spec_path},
          {"corpus", corpus_path},
          {"flow_dir", flow_dir},
          {"cell_size", cell_size},
          {"threshold", threshold},
          {"clip_frames", clip_frames}}},
        {"truth", truth_path},
        {"hdp",
         {{"gamma", hdp.gamma},
          {"alpha", hdp.alpha},
          {"d0", hdp.d0},
          {"sweeps", hdp.n_sweeps},
          {"burnin", hdp.n_burnin},
          {"seed", hdp.seed}}},
        {"hmm",
         {{"gamma", hmm.gamma},
          {"alpha", hmm.alpha},
          {"d0", hmm.d0},
          {"sweeps", hmm.n_sweeps},
          {"burnin", hmm.n_burnin},
          {"seed", hmm.seed}}},
        {"representation",
         {{"word_cutoff", word_cutoff},
          {"activity_cutoff", activity_cutoff},
          {"state_cutoff", state_cutoff}}},
        {"gp",
         {{"kernel", gp_kernel},
          {"optimize", gp_optimize},
          {"signal_sigma", gp_signal_sigma},
          {"length_scale", gp_length_scale},
          {"noise_sigma", gp_noise_sigma}}},
        {"fusion", {{"beta", fusion.beta_weight}, {"prob_floor", fusion.prob_floor}}},
        {"anomaly",
         {{"th_rare", anomaly.rare_word_count}, {"th_trans", anomaly.transition_floor}}},
    };
}

void PipelineConfig::validate() const {
    const int sources = (scene_spec_path.empty() ? 0 : 1) + (corpus_path.empty() ? 0 : 1) +
                        (flow_dir.empty() ? 0 : 1);
    if (sources != 1)
        throw DataError("PipelineConfig: exactly one input source required "
                        "(scene_spec, corpus or flow_dir)");
    if (mode != "batch" && mode != "stream")
        throw DataError("PipelineConfig: mode must be 'batch' or 'stream'");
    if (train_clips < 2) throw DataError("PipelineConfig: train_clips must be >= 2");
    hdp.validate();
    hmm.validate();
    fusion.validate();
    anomaly.validate();
    if (gp_kernel != "rbf" && gp_kernel != "ard")
        throw DataError("PipelineConfig: gp kernel must be 'rbf' or 'ard'");
}

void save_labels(const std::vector<LabelRecord>& labels, const std::vector<int>& classes,
                 const std::string& path, const std::string& config_hash) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("save_labels: cannot open " + path);
    json header = {{"schema", "labels/1"}, {"config_hash", config_hash}, {"classes", classes}};
    f << header.dump() << '\n';
    for (const auto& rec : labels) {
        json line = {{"clip_id", rec.clip_id},
                     {"gp", rec.gp_probs},
                     {"label", rec.label},
                     {"energy", rec.energies}};
        f << line.dump() << '\n';
    }
    if (!f) throw DataError("save_labels: write failed for " + path);
}

std::vector<LabelRecord> load_labels(const std::string& path, std::vector<int>* classes) {
    std::ifstream f(path);
    if (!f) throw DataError("load_labels: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw DataError("load_labels: empty file " + path);
    try {
        json header = json::parse(line);
        if (header.at("schema").get<std::string>() != "labels/1")
            throw DataError("load_labels: unsupported schema in " + path);
        if (classes) *classes = header.at("classes").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw DataError("load_labels: bad header in " + path + ": " + e.what());
    }
    std::vector<LabelRecord> out;
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            LabelRecord rec;
            rec.clip_id = j.at("clip_id").get<std::int64_t>();
            rec.gp_probs = j.at("gp").get<std::vector<double>>();
            rec.label = j.at("label").get<int>();
            rec.energies = j.at("energy").get<std::vector<double>>();
            out.push_back(std::move(rec));
        } catch (const json::exception& e) {
            throw DataError("load_labels: malformed line " + std::to_string(line_no) + " of " +
                            path + ": " + e.what());
        }
    }
    return out;
}

StreamProcessor::StreamProcessor(const GpMulticlass& gp, const StateModel& states,
                                 const std::vector<GpRegressor>& regressors,
                                 const std::vector<ActivityWordSet>& word_sets,
                                 const GridSpec& grid, const FusionConfig& fusion,
                                 const AnomalyThresholds& thresholds)
    : gp_(&gp), states_(&states), regressors_(&regressors), word_sets_(&word_sets),
      grid_(grid), fusion_(fusion), thresholds_(thresholds) {
    fusion_.validate();
    thresholds_.validate();
    const auto& classes = gp.classes();
    class_trans_.resize(classes.size(), classes.size());
    for (std::size_t from = 0; from < classes.size(); ++from)
        for (std::size_t to = 0; to < classes.size(); ++to)
            class_trans_(to, from) = transition_prob(states, classes[from], classes[to]);
}

StreamProcessor::ClipResult StreamProcessor::process(const ClipDocument& clip,
                                                     const ClipFeature& feature,
                                                     bool run_detectors) {
    ClipResult result;
    const auto& classes = gp_->classes();

    Eigen::VectorXd x(feature.c.size());
    for (std::size_t i = 0; i < feature.c.size(); ++i) x(i) = feature.c[i];
    const Eigen::VectorXd probs = gp_->predict(x);

    const int fused_idx = fuse_classify(probs, prev_, class_trans_, fusion_);

    result.label.clip_id = clip.clip_id;
    result.label.gp_probs.assign(probs.data(), probs.data() + probs.size());
    result.label.label = classes[fused_idx];
    if (prev_.has_value()) {
        result.label.energies.resize(classes.size());
        for (std::size_t cand = 0; cand < classes.size(); ++cand)
            result.label.energies[cand] =
                state_energy(probs, *prev_, static_cast<int>(cand), class_trans_, fusion_);
    }

    if (run_detectors) {
        if (auto ev = detect_rare_motions(clip, feature, grid_, thresholds_))
            result.events.push_back(std::move(*ev));
        auto conflicts =
            detect_conflicts(clip, feature, *word_sets_, *regressors_, grid_, thresholds_);
        for (auto& ev : conflicts) result.events.push_back(std::move(ev));
        if (prev_.has_value()) {
            if (auto ev = detect_illegal_transition(clip.clip_id, classes[*prev_],
                                                    classes[fused_idx], *states_, thresholds_))
                result.events.push_back(std::move(*ev));
        }
    }

    prev_ = fused_idx;
    return result;
}

namespace {

struct StageTimer {
    std::ostream& log;
    std::string name;
    std::chrono::steady_clock::time_point start;
    StageTimer(std::ostream& log_, std::string name_)
        : log(log_), name(std::move(name_)), start(std::chrono::steady_clock::now()) {
        log << "[" << name << "] running\n";
    }
    ~StageTimer() {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.2f", secs);
        log << "[" << name << "] done (" << buf << " s)\n";
    }
};

bool stage_fresh(const std::vector<std::string>& outputs,
                 const std::vector<std::string>& inputs) {
    fs::file_time_type newest_input = fs::file_time_type::min();
    for (const auto& in : inputs) {
        if (!fs::exists(in)) return false;
        newest_input = std::max(newest_input, fs::last_write_time(in));
    }
    for (const auto& out : outputs) {
        if (!fs::exists(out)) return false;
        if (fs::last_write_time(out) < newest_input) return false;
    }
    return true;
}

// Runs `body` unless every output is newer than every input; failures are
// rethrown with the stage name attached.
template <typename Body>
void run_stage(std::ostream& log, const char* name, bool force,
               const std::vector<std::string>& outputs,
               const std::vector<std::string>& inputs, Body body) {
    if (!force && stage_fresh(outputs, inputs)) {
        log << "[" << name << "] up to date, skipped\n";
        return;
    }
    StageTimer timer(log, name);
    try {
        body();
    } catch (const NumericalError& e) {
        throw NumericalError(std::string("stage ") + name + ": " + e.what());
    } catch (const std::exception& e) {
        throw DataError(std::string("stage ") + name + ": " + e.what());
    }
}

KernelSpec make_kernel(const PipelineConfig& cfg, int dim, bool regression) {
    KernelSpec spec;
    spec.kind = cfg.gp_kernel == "rbf" ? KernelKind::RBF : KernelKind::ARD;
    spec.signal_sigma = cfg.gp_signal_sigma;
    spec.length_scales.assign(spec.kind == KernelKind::RBF ? 1 : dim, cfg.gp_length_scale);
    spec.noise_sigma = regression ? cfg.gp_noise_sigma : 0.0;
    return spec;
}

Eigen::MatrixXd feature_matrix(const std::vector<ClipFeature>& feats) {
    if (feats.empty()) return Eigen::MatrixXd(0, 0);
    Eigen::MatrixXd X(feats.size(), feats[0].c.size());
    for (std::size_t i = 0; i < feats.size(); ++i)
        for (std::size_t d = 0; d < feats[i].c.size(); ++d) X(i, d) = feats[i].c[d];
    return X;
}

}  // namespace

int run_pipeline(const PipelineConfig& config, bool force, std::ostream& log) {
    config.validate();
    // hash over the semantic configuration; execution details (mode,
    // output directory) do not change what gets computed
    json hash_src = config.to_json();
    hash_src.erase("mode");
    hash_src.erase("out_dir");
    const std::string hash = config_hash(hash_src);
    fs::create_directories(config.out_dir);
    auto path = [&](const char* name) { return (fs::path(config.out_dir) / name).string(); };

    const std::string corpus_file =
        config.corpus_path.empty() ? path("corpus.jsonl") : config.corpus_path;
    std::string truth_file = config.truth_path;

    // --- acquire corpus
    if (!config.scene_spec_path.empty()) {
        if (truth_file.empty()) truth_file = path("gt.json");
        run_stage(log, "simulate", force, {corpus_file, truth_file},
                  {config.scene_spec_path}, [&] {
            SceneSpec spec = load_scene_spec(config.scene_spec_path);
            auto [corpus, gt] = generate(spec);
            save_corpus(corpus, corpus_file, hash);
            save_ground_truth(gt, truth_file, hash);
        });
    } else if (!config.flow_dir.empty()) {
        run_stage(log, "quantize", force, {corpus_file}, {}, [&] {
            std::vector<fs::path> files;
            for (const auto& entry : fs::directory_iterator(config.flow_dir))
                if (entry.path().extension() == ".flo") files.push_back(entry.path());
            if (files.empty())
                throw DataError("no .flo files in " + config.flow_dir);
            std::sort(files.begin(), files.end());

            FlowField first = read_flow_file(files.front().string());
            GridSpec grid;
            grid.frame_width = first.width;
            grid.frame_height = first.height;
            grid.cell_size = config.cell_size;
            grid.magnitude_threshold = config.threshold;
            grid.validate();

            std::vector<std::vector<int>> frame_words;
            for (const auto& file : files)
                frame_words.push_back(quantize_flow(read_flow_file(file.string()), grid));
            save_corpus(segment_clips(frame_words, grid, config.clip_frames), corpus_file,
                        hash);
        });
    }

    // --- split train/test
    const std::string train_file = path("corpus_train.jsonl");
    const std::string test_file = path("corpus_test.jsonl");
    run_stage(log, "split", force, {train_file, test_file}, {corpus_file}, [&] {
        Corpus corpus = load_corpus(corpus_file);
        if (static_cast<int>(corpus.clips.size()) <= config.train_clips)
            throw DataError("corpus has " + std::to_string(corpus.clips.size()) +
                            " clips, need more than train_clips=" +
                            std::to_string(config.train_clips));
        save_corpus(slice_corpus(corpus, 0, config.train_clips), train_file, hash);
        save_corpus(slice_corpus(corpus, config.train_clips, corpus.clips.size()), test_file,
                    hash);
    });

    // --- learn activities
    const std::string activities_file = path("activities.json");
    run_stage(log, "learn-activities", force, {activities_file}, {train_file}, [&] {
        Corpus train = load_corpus(train_file);
        ActivityModel model = fit_hdp(train, config.hdp);
        if (config.activity_cutoff != 0.99) {
            std::vector<double> counts(model.counts.begin(), model.counts.end());
            model.typical = select_typical_activities(counts, config.activity_cutoff);
        }
        save_activity_model(model, activities_file, hash);
        log << "[learn-activities] " << model.n_topics << " activities, "
            << model.typical.size() << " typical\n";
    });

    // --- learn states
    const std::string states_file = path("states.json");
    run_stage(log, "learn-states", force, {states_file}, {train_file}, [&] {
        Corpus train = load_corpus(train_file);
        StateModel model = fit_hdphmm(train, config.hmm);
        if (config.state_cutoff != 0.99)
            model.typical =
                select_typical_states(model.state_seq, model.n_states, config.state_cutoff);
        save_state_model(model, states_file, hash);
        log << "[learn-states] " << model.n_states << " states, " << model.typical.size()
            << " typical\n";
    });

    // --- featurize both splits
    const std::string feat_train_file = path("features_train.jsonl");
    const std::string feat_test_file = path("features_test.jsonl");
    run_stage(log, "featurize", force, {feat_train_file, feat_test_file},
              {train_file, test_file, activities_file, states_file}, [&] {
        Corpus train = load_corpus(train_file);
        Corpus test = load_corpus(test_file);
        ActivityModel activities = load_activity_model(activities_file);
        StateModel states = load_state_model(states_file);
        const auto sets = typical_word_sets(activities, config.word_cutoff);

        std::vector<bool> is_typical(states.n_states, false);
        for (int s : states.typical) is_typical[s] = true;

        FeatureFile train_out;
        train_out.activities = activities.typical;
        train_out.word_sets = sets;
        for (std::size_t i = 0; i < train.clips.size(); ++i) {
            train_out.features.push_back(clip_feature(train.clips[i], sets));
            const int label = states.state_seq[i];
            train_out.labels.push_back(is_typical[label] ? std::optional<int>(label)
                                                         : std::nullopt);
        }
        save_features(train_out, feat_train_file, hash);

        FeatureFile test_out;
        test_out.activities = activities.typical;
        test_out.word_sets = sets;
        for (const auto& clip : test.clips) {
            test_out.features.push_back(clip_feature(clip, sets));
            test_out.labels.push_back(std::nullopt);
        }
        save_features(test_out, feat_test_file, hash);
    });

    // --- train GP classifier
    const std::string gp_file = path("gp.json");
    run_stage(log, "train-gp", force, {gp_file}, {feat_train_file}, [&] {
        FeatureFile feats = load_features(feat_train_file);
        std::vector<ClipFeature> labeled;
        std::vector<int> labels;
        for (std::size_t i = 0; i < feats.features.size(); ++i) {
            if (!feats.labels[i].has_value()) continue;
            labeled.push_back(feats.features[i]);
            labels.push_back(*feats.labels[i]);
        }
        if (labeled.empty()) throw DataError("no labeled training features");
        Eigen::MatrixXd X = feature_matrix(labeled);
        KernelSpec init = make_kernel(config, static_cast<int>(X.cols()), false);
        GpMulticlass gp = GpMulticlass::train(X, labels, init, config.gp_optimize);
        save_gp_multiclass(gp, gp_file, hash);
    });

    // --- train conflict regressors
    const std::string gpr_file = path("gpr.json");
    run_stage(log, "train-regressors", force, {gpr_file}, {feat_train_file}, [&] {
        FeatureFile feats = load_features(feat_train_file);
        std::vector<ClipFeature> labeled;
        for (std::size_t i = 0; i < feats.features.size(); ++i)
            if (feats.labels[i].has_value()) labeled.push_back(feats.features[i]);
        if (labeled.empty()) throw DataError("no labeled features");
        Eigen::MatrixXd C = feature_matrix(labeled);

        std::vector<GpRegressor> regressors;
        std::vector<int> target_indices;
        for (Eigen::Index i = 0; i < C.cols(); ++i) {
            Eigen::MatrixXd X(C.rows(), C.cols() - 1);
            Eigen::Index col = 0;
            for (Eigen::Index j = 0; j < C.cols(); ++j)
                if (j != i) X.col(col++) = C.col(j);
            KernelSpec init = make_kernel(config, static_cast<int>(X.cols()), true);
            if (config.gp_optimize)
                init = optimize_regression_hyperparams(X, C.col(i), init);
            regressors.push_back(GpRegressor::fit(X, C.col(i), init));
            target_indices.push_back(static_cast<int>(i));
        }
        save_gp_regressors(regressors, target_indices, gpr_file, hash);
    });

    // --- classify + detect over the test stream
    const std::string labels_file = path("labels.jsonl");
    const std::string anomalies_file = path("anomalies.jsonl");
    run_stage(log, "classify+detect", force, {labels_file, anomalies_file},
              {feat_test_file, test_file, gp_file, gpr_file, states_file}, [&] {
        GpMulticlass gp = load_gp_multiclass(gp_file);
        StateModel states = load_state_model(states_file);
        std::vector<GpRegressor> regressors = load_gp_regressors(gpr_file);
        FeatureFile feats = load_features(feat_test_file);
        Corpus test = load_corpus(test_file);
        if (feats.features.size() != test.clips.size())
            throw DataError("classify: feature count does not match test corpus");

        StreamProcessor proc(gp, states, regressors, feats.word_sets, test.grid,
                             config.fusion, config.anomaly);

        const auto t0 = std::chrono::steady_clock::now();
        if (config.mode == "stream") {
            // incremental emission: one label line and any event lines per clip
            std::ofstream lf(labels_file, std::ios::trunc);
            std::ofstream af(anomalies_file, std::ios::trunc);
            if (!lf || !af) throw DataError("classify: cannot open output files");
            json lh = {{"schema", "labels/1"}, {"config_hash", hash}, {"classes", gp.classes()}};
            json ah = {{"schema", "anomalies/1"}, {"config_hash", hash}};
            lf << lh.dump() << '\n';
            af << ah.dump() << '\n';
            for (std::size_t i = 0; i < test.clips.size(); ++i) {
                auto res = proc.process(test.clips[i], feats.features[i]);
                json line = {{"clip_id", res.label.clip_id},
                             {"gp", res.label.gp_probs},
                             {"label", res.label.label},
                             {"energy", res.label.energies}};
                lf << line.dump() << '\n';
                lf.flush();
                for (const auto& ev : res.events) {
                    json cells = json::array();
                    for (const auto& c : ev.locations) cells.push_back({c.x, c.y});
                    json eline = {{"clip_id", ev.clip_id},
                                  {"kind", anomaly_kind_name(ev.kind)},
                                  {"score", ev.score},
                                  {"locations", cells},
                                  {"detail", ev.detail}};
                    af << eline.dump() << '\n';
                }
                af.flush();
            }
        } else {
            std::vector<LabelRecord> labels;
            std::vector<AnomalyEvent> events;
            for (std::size_t i = 0; i < test.clips.size(); ++i) {
                auto res = proc.process(test.clips[i], feats.features[i]);
                labels.push_back(std::move(res.label));
                for (auto& ev : res.events) events.push_back(std::move(ev));
            }
            save_labels(labels, gp.classes(), labels_file, hash);
            save_anomaly_events(events, anomalies_file, hash);
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > 0)
            log << "[classify+detect] throughput " << static_cast<long>(test.clips.size() / secs)
                << " clips/s\n";
    });

    // --- evaluate against ground truth
    if (!truth_file.empty()) {
        const std::string report_file = path("report.json");
        run_stage(log, "evaluate", force, {report_file},
                  {labels_file, anomalies_file, truth_file}, [&] {
            GroundTruth gt = load_ground_truth(truth_file);
            std::vector<LabelRecord> labels = load_labels(labels_file);
            std::vector<AnomalyEvent> events = load_anomaly_events(anomalies_file);
            std::vector<std::pair<std::int64_t, int>> pred;
            for (const auto& rec : labels) pred.emplace_back(rec.clip_id, rec.label);
            EvalReport report = evaluate(pred, gt, events);
            save_report(report, report_file, hash);
            log << "[evaluate] accuracy " << report.overall_accuracy << ", tpr " << report.tpr
                << ", fpr " << report.fpr << "\n";
        });
    }
    return 0;
}

}  // namespace sceneminer
