// Command-line front end: quantization, model learning, classification,
// anomaly detection and the full pipeline driver.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sceneminer/anomaly.hpp"
#include "sceneminer/codebook.hpp"
#include "sceneminer/errors.hpp"
#include "sceneminer/eval.hpp"
#include "sceneminer/fusion.hpp"
#include "sceneminer/gp.hpp"
#include "sceneminer/hdp.hpp"
#include "sceneminer/hdp_hmm.hpp"
#include "sceneminer/pipeline.hpp"
#include "sceneminer/representation.hpp"
#include "sceneminer/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sceneminer;

namespace {

Eigen::MatrixXd feature_matrix(const std::vector<ClipFeature>& feats) {
    if (feats.empty()) return Eigen::MatrixXd(0, 0);
    Eigen::MatrixXd X(feats.size(), feats[0].c.size());
    for (std::size_t i = 0; i < feats.size(); ++i)
        for (std::size_t d = 0; d < feats[i].c.size(); ++d) X(i, d) = feats[i].c[d];
    return X;
}

int cmd_quantize(const std::string& flow_dir, int cell, double threshold, int clip_frames,
                 const std::string& out) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(flow_dir))
        if (entry.path().extension() == ".flo") files.push_back(entry.path());
    if (files.empty()) throw DataError("quantize: no .flo files in " + flow_dir);
    std::sort(files.begin(), files.end());

    FlowField first = read_flow_file(files.front().string());
    GridSpec grid;
    grid.frame_width = first.width;
    grid.frame_height = first.height;
    grid.cell_size = cell;
    grid.magnitude_threshold = threshold;
    grid.validate();

    std::vector<std::vector<int>> frame_words;
    frame_words.reserve(files.size());
    for (const auto& file : files)
        frame_words.push_back(quantize_flow(read_flow_file(file.string()), grid));

    const json opts = {{"cmd", "quantize"}, {"cell", cell}, {"threshold", threshold},
                       {"clip_frames", clip_frames}};
    save_corpus(segment_clips(frame_words, grid, clip_frames), out, config_hash(opts));
    std::cerr << "quantize: " << frame_words.size() << " frames -> " << out << "\n";
    return 0;
}

int cmd_learn_activities(const std::string& corpus_path, HdpHyperParams hyper,
                         double cutoff, const std::string& out) {
    Corpus corpus = load_corpus(corpus_path);
    ActivityModel model = fit_hdp(corpus, hyper);
    if (cutoff != 0.99) {
        std::vector<double> counts(model.counts.begin(), model.counts.end());
        model.typical = select_typical_activities(counts, cutoff);
    }
    const json opts = {{"cmd", "learn-activities"}, {"gamma", hyper.gamma},
                       {"alpha", hyper.alpha},     {"d0", hyper.d0},
                       {"sweeps", hyper.n_sweeps}, {"burnin", hyper.n_burnin},
                       {"seed", hyper.seed},       {"cutoff", cutoff}};
    save_activity_model(model, out, config_hash(opts));
    std::cerr << "learn-activities: " << model.n_topics << " activities ("
              << model.typical.size() << " typical) -> " << out << "\n";
    return 0;
}

int cmd_learn_states(const std::string& corpus_path, HdpHyperParams hyper, double cutoff,
                     const std::string& out) {
    Corpus corpus = load_corpus(corpus_path);
    StateModel model = fit_hdphmm(corpus, hyper);
    if (cutoff != 0.99)
        model.typical = select_typical_states(model.state_seq, model.n_states, cutoff);
    const json opts = {{"cmd", "learn-states"},    {"gamma", hyper.gamma},
                       {"alpha", hyper.alpha},     {"d0", hyper.d0},
                       {"sweeps", hyper.n_sweeps}, {"burnin", hyper.n_burnin},
                       {"seed", hyper.seed},       {"cutoff", cutoff}};
    save_state_model(model, out, config_hash(opts));
    std::cerr << "learn-states: " << model.n_states << " states (" << model.typical.size()
              << " typical) -> " << out << "\n";
    return 0;
}

int cmd_featurize(const std::string& corpus_path, const std::string& activities_path,
                  const std::string& states_path, double word_cutoff,
                  const std::string& out) {
    Corpus corpus = load_corpus(corpus_path);
    ActivityModel activities = load_activity_model(activities_path);
    StateModel states = load_state_model(states_path);
    const auto sets = typical_word_sets(activities, word_cutoff);

    FeatureFile file;
    file.activities = activities.typical;
    file.word_sets = sets;

    const bool labeled = states.state_seq.size() == corpus.clips.size();
    if (!labeled)
        std::cerr << "featurize: state sequence does not cover this corpus; labels omitted\n";
    std::vector<bool> is_typical(states.n_states, false);
    for (int s : states.typical) is_typical[s] = true;

    for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
        file.features.push_back(clip_feature(corpus.clips[i], sets));
        if (labeled && is_typical[states.state_seq[i]])
            file.labels.push_back(states.state_seq[i]);
        else
            file.labels.push_back(std::nullopt);
    }
    const json opts = {{"cmd", "featurize"}, {"word_cutoff", word_cutoff}};
    save_features(file, out, config_hash(opts));
    std::cerr << "featurize: " << file.features.size() << " clips -> " << out << "\n";
    return 0;
}

KernelSpec cli_kernel(const std::string& kind, int dim, double noise) {
    KernelSpec spec;
    if (kind == "rbf") spec.kind = KernelKind::RBF;
    else if (kind == "ard") spec.kind = KernelKind::ARD;
    else throw DataError("unknown kernel '" + kind + "' (use rbf or ard)");
    spec.length_scales.assign(spec.kind == KernelKind::RBF ? 1 : dim, 1.0);
    spec.noise_sigma = noise;
    return spec;
}

int cmd_train_gp(const std::string& features_path, const std::string& kernel, bool optimize,
                 const std::string& out) {
    FeatureFile feats = load_features(features_path);
    std::vector<ClipFeature> labeled;
    std::vector<int> labels;
    for (std::size_t i = 0; i < feats.features.size(); ++i) {
        if (!feats.labels[i].has_value()) continue;
        labeled.push_back(feats.features[i]);
        labels.push_back(*feats.labels[i]);
    }
    if (labeled.empty()) throw DataError("train-gp: no labeled features in " + features_path);
    Eigen::MatrixXd X = feature_matrix(labeled);
    GpMulticlass gp = GpMulticlass::train(
        X, labels, cli_kernel(kernel, static_cast<int>(X.cols()), 0.0), optimize);
    const json opts = {{"cmd", "train-gp"}, {"kernel", kernel}, {"optimize", optimize}};
    save_gp_multiclass(gp, out, config_hash(opts));
    std::cerr << "train-gp: " << labeled.size() << " clips, " << gp.classes().size()
              << " classes -> " << out << "\n";
    return 0;
}

int cmd_train_regressors(const std::string& features_path, const std::string& kernel,
                         bool optimize, double noise, const std::string& out) {
    FeatureFile feats = load_features(features_path);
    std::vector<ClipFeature> labeled;
    for (std::size_t i = 0; i < feats.features.size(); ++i)
        if (feats.labels[i].has_value()) labeled.push_back(feats.features[i]);
    if (labeled.empty())
        throw DataError("train-regressors: no labeled features in " + features_path);
    Eigen::MatrixXd C = feature_matrix(labeled);

    std::vector<GpRegressor> regressors;
    std::vector<int> target_indices;
    for (Eigen::Index i = 0; i < C.cols(); ++i) {
        Eigen::MatrixXd X(C.rows(), C.cols() - 1);
        Eigen::Index col = 0;
        for (Eigen::Index j = 0; j < C.cols(); ++j)
            if (j != i) X.col(col++) = C.col(j);
        KernelSpec init = cli_kernel(kernel, static_cast<int>(X.cols()), noise);
        if (optimize) init = optimize_regression_hyperparams(X, C.col(i), init);
        regressors.push_back(GpRegressor::fit(X, C.col(i), init));
        target_indices.push_back(static_cast<int>(i));
    }
    const json opts = {{"cmd", "train-regressors"}, {"kernel", kernel},
                       {"optimize", optimize},      {"noise", noise}};
    save_gp_regressors(regressors, target_indices, out, config_hash(opts));
    std::cerr << "train-regressors: " << regressors.size() << " models -> " << out << "\n";
    return 0;
}

int cmd_classify(const std::string& features_path, const std::string& gp_path,
                 const std::string& states_path, double beta, const std::string& out) {
    FeatureFile feats = load_features(features_path);
    GpMulticlass gp = load_gp_multiclass(gp_path);
    StateModel states = load_state_model(states_path);

    FusionConfig cfg;
    cfg.beta_weight = beta;
    std::vector<GpRegressor> no_regressors;
    GridSpec stub_grid;
    stub_grid.frame_width = 8;
    stub_grid.frame_height = 8;
    StreamProcessor proc(gp, states, no_regressors, feats.word_sets, stub_grid, cfg,
                         AnomalyThresholds{});

    std::vector<LabelRecord> labels;
    ClipDocument stub;
    for (const auto& ft : feats.features) {
        stub.clip_id = ft.clip_id;
        labels.push_back(proc.process(stub, ft, /*run_detectors=*/false).label);
    }
    const json opts = {{"cmd", "classify"}, {"beta", beta}};
    save_labels(labels, gp.classes(), out, config_hash(opts));
    std::cerr << "classify: " << labels.size() << " clips -> " << out << "\n";
    return 0;
}

int cmd_detect(const std::string& features_path, const std::string& corpus_path,
               const std::string& gp_path, const std::string& gpr_path,
               const std::string& states_path, double beta, std::int64_t th_rare,
               double th_trans, const std::string& out) {
    FeatureFile feats = load_features(features_path);
    Corpus corpus = load_corpus(corpus_path);
    GpMulticlass gp = load_gp_multiclass(gp_path);
    StateModel states = load_state_model(states_path);
    std::vector<GpRegressor> regressors = load_gp_regressors(gpr_path);
    if (feats.features.size() != corpus.clips.size())
        throw DataError("detect: feature count does not match corpus");

    FusionConfig cfg;
    cfg.beta_weight = beta;
    AnomalyThresholds th;
    th.rare_word_count = th_rare;
    th.transition_floor = th_trans;

    StreamProcessor proc(gp, states, regressors, feats.word_sets, corpus.grid, cfg, th);
    std::vector<AnomalyEvent> events;
    for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
        auto res = proc.process(corpus.clips[i], feats.features[i]);
        for (auto& ev : res.events) events.push_back(std::move(ev));
    }
    const json opts = {{"cmd", "detect"}, {"beta", beta}, {"th_rare", th_rare},
                       {"th_trans", th_trans}};
    save_anomaly_events(events, out, config_hash(opts));
    std::cerr << "detect: " << events.size() << " events -> " << out << "\n";
    return 0;
}

int cmd_simulate(const std::string& spec_path, std::uint64_t seed, bool default_spec,
                 const std::string& out, const std::string& truth) {
    SceneSpec spec = default_spec ? default_scene_spec() : load_scene_spec(spec_path);
    if (seed != 0) spec.seed = seed;
    auto [corpus, gt] = generate(spec);
    const json opts = {{"cmd", "simulate"}, {"seed", spec.seed}};
    const std::string hash = config_hash(opts);
    save_corpus(corpus, out, hash);
    save_ground_truth(gt, truth, hash);
    std::cerr << "simulate: " << corpus.clips.size() << " clips -> " << out << "\n";
    return 0;
}

int cmd_evaluate(const std::string& pred_path, const std::string& truth_path,
                 const std::string& events_path, const std::string& report_path) {
    std::vector<LabelRecord> labels = load_labels(pred_path);
    GroundTruth gt = load_ground_truth(truth_path);
    std::vector<AnomalyEvent> events;
    if (!events_path.empty()) events = load_anomaly_events(events_path);

    std::vector<std::pair<std::int64_t, int>> pred;
    for (const auto& rec : labels) pred.emplace_back(rec.clip_id, rec.label);
    EvalReport report = evaluate(pred, gt, events);
    const json opts = {{"cmd", "evaluate"}};
    save_report(report, report_path, config_hash(opts));
    std::cerr << "evaluate: accuracy " << report.overall_accuracy << ", tpr " << report.tpr
              << ", fpr " << report.fpr << " -> " << report_path << "\n";
    return 0;
}

int cmd_run(const std::string& config_path, bool force, const std::string& mode_override) {
    std::ifstream f(config_path);
    if (!f) throw DataError("run: cannot open config " + config_path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw DataError("run: malformed config " + config_path + ": " + e.what());
    }
    PipelineConfig config = PipelineConfig::from_json(j);
    if (!mode_override.empty()) config.mode = mode_override;
    return run_pipeline(config, force, std::cerr);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sceneminer: activity and state mining with anomaly detection "
                 "for motion-word streams"};
    app.require_subcommand(1);

    std::string flow_dir, out, corpus_path, activities_path, states_path, features_path;
    std::string gp_path, gpr_path, truth_path, events_path, spec_path, config_path;
    int cell = 8, clip_frames = 75;
    double threshold = 1.0;
    auto* quantize = app.add_subcommand("quantize", "Quantize flow fields into a corpus");
    quantize->add_option("--flow-dir", flow_dir, "Directory of .flo files")->required();
    quantize->add_option("--cell", cell, "Cell size in pixels");
    quantize->add_option("--threshold", threshold, "Flow magnitude threshold");
    quantize->add_option("--clip-frames", clip_frames, "Frames per clip");
    quantize->add_option("--out", out, "Output corpus path")->required();

    HdpHyperParams hyper;
    double cutoff = 0.99;
    auto add_hyper_flags = [&](CLI::App* cmd) {
        cmd->add_option("--corpus", corpus_path, "Corpus path")->required();
        cmd->add_option("--gamma", hyper.gamma, "Top-level concentration");
        cmd->add_option("--alpha", hyper.alpha, "Group-level concentration");
        cmd->add_option("--d0", hyper.d0, "Dirichlet base parameter");
        cmd->add_option("--sweeps", hyper.n_sweeps, "Gibbs sweeps");
        cmd->add_option("--burnin", hyper.n_burnin, "Burn-in sweeps");
        cmd->add_option("--seed", hyper.seed, "RNG seed");
        cmd->add_option("--cutoff", cutoff, "Typical-set cumulative cutoff");
        cmd->add_option("--out", out, "Output model path")->required();
    };
    auto* learn_act = app.add_subcommand("learn-activities", "Learn activities by HDP");
    add_hyper_flags(learn_act);
    auto* learn_states = app.add_subcommand("learn-states", "Learn states by HDP-HMM");
    add_hyper_flags(learn_states);

    double word_cutoff = 0.9;
    auto* featurize = app.add_subcommand("featurize", "Build clip feature vectors");
    featurize->add_option("--corpus", corpus_path, "Corpus path")->required();
    featurize->add_option("--activities", activities_path, "Activity model")->required();
    featurize->add_option("--states", states_path, "State model")->required();
    featurize->add_option("--word-cutoff", word_cutoff, "Word-set cumulative cutoff");
    featurize->add_option("--out", out, "Output features path")->required();

    std::string kernel = "ard";
    bool optimize = false;
    auto* train_gp = app.add_subcommand("train-gp", "Train the GP state classifier");
    train_gp->add_option("--features", features_path, "Labeled features")->required();
    train_gp->add_option("--kernel", kernel, "Kernel: rbf or ard");
    train_gp->add_flag("--optimize", optimize, "Optimize hyperparameters");
    train_gp->add_option("--out", out, "Output model path")->required();

    double noise = 0.1;
    bool no_optimize = false;
    auto* train_gpr = app.add_subcommand("train-regressors",
                                         "Train per-activity conflict regressors");
    train_gpr->add_option("--features", features_path, "Labeled features")->required();
    train_gpr->add_option("--kernel", kernel, "Kernel: rbf or ard");
    train_gpr->add_option("--noise", noise, "Initial observation noise");
    train_gpr->add_flag("--no-optimize", no_optimize, "Skip hyperparameter optimization");
    train_gpr->add_option("--out", out, "Output model path")->required();

    double beta = 0.1;
    auto* classify = app.add_subcommand("classify", "Transition-fused state classification");
    classify->add_option("--features", features_path, "Features path")->required();
    classify->add_option("--gp", gp_path, "GP classifier model")->required();
    classify->add_option("--states", states_path, "State model")->required();
    classify->add_option("--beta", beta, "Transition energy weight");
    classify->add_option("--out", out, "Output labels path")->required();

    std::int64_t th_rare = 50;
    double th_trans = 0.05;
    auto* detect = app.add_subcommand("detect", "Detect anomalies on a clip stream");
    detect->add_option("--features", features_path, "Features path")->required();
    detect->add_option("--corpus", corpus_path, "Corpus path")->required();
    detect->add_option("--gp", gp_path, "GP classifier model")->required();
    detect->add_option("--gpr", gpr_path, "Conflict regressors")->required();
    detect->add_option("--states", states_path, "State model")->required();
    detect->add_option("--beta", beta, "Transition energy weight");
    detect->add_option("--th-rare", th_rare, "Rare-motion token threshold");
    detect->add_option("--th-trans", th_trans, "Illegal-transition probability floor");
    detect->add_option("--out", out, "Output events path")->required();

    std::uint64_t sim_seed = 0;
    bool use_default_spec = false;
    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic scene corpus");
    simulate->add_option("--spec", spec_path, "Scene spec path");
    simulate->add_flag("--default-spec", use_default_spec, "Use the built-in scene");
    simulate->add_option("--seed", sim_seed, "Override the spec seed");
    simulate->add_option("--out", out, "Output corpus path")->required();
    simulate->add_option("--truth", truth_path, "Output ground truth path")->required();

    auto* write_spec = app.add_subcommand("write-scene-spec", "Write the built-in scene spec");
    write_spec->add_option("--out", out, "Output spec path")->required();

    std::string pred_path, report_path;
    auto* evaluate = app.add_subcommand("evaluate", "Score labels and events against truth");
    evaluate->add_option("--pred", pred_path, "Predicted labels")->required();
    evaluate->add_option("--truth", truth_path, "Ground truth")->required();
    evaluate->add_option("--events", events_path, "Anomaly events");
    evaluate->add_option("--report", report_path, "Output report path")->required();

    bool force = false;
    std::string mode_override;
    auto* run = app.add_subcommand("run", "Run the full pipeline from a config file");
    run->add_option("--config", config_path, "Pipeline config (JSON)")->required();
    run->add_flag("--force", force, "Re-run every stage");
    run->add_option("--mode", mode_override, "Override mode: batch or stream");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 1;
    }

    try {
        if (quantize->parsed())
            return cmd_quantize(flow_dir, cell, threshold, clip_frames, out);
        if (learn_act->parsed())
            return cmd_learn_activities(corpus_path, hyper, cutoff, out);
        if (learn_states->parsed())
            return cmd_learn_states(corpus_path, hyper, cutoff, out);
        if (featurize->parsed())
            return cmd_featurize(corpus_path, activities_path, states_path, word_cutoff, out);
        if (train_gp->parsed()) return cmd_train_gp(features_path, kernel, optimize, out);
        if (train_gpr->parsed())
            return cmd_train_regressors(features_path, kernel, !no_optimize, noise, out);
        if (classify->parsed())
            return cmd_classify(features_path, gp_path, states_path, beta, out);
        if (detect->parsed())
            return cmd_detect(features_path, corpus_path, gp_path, gpr_path, states_path,
                              beta, th_rare, th_trans, out);
        if (simulate->parsed()) {
            if (!use_default_spec && spec_path.empty())
                throw DataError("simulate: provide --spec or --default-spec");
            return cmd_simulate(spec_path, sim_seed, use_default_spec, out, truth_path);
        }
        if (write_spec->parsed()) {
            save_scene_spec(default_scene_spec(), out);
            return 0;
        }
        if (evaluate->parsed())
            return cmd_evaluate(pred_path, truth_path, events_path, report_path);
        if (run->parsed()) return cmd_run(config_path, force, mode_override);
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
