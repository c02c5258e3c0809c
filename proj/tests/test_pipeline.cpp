#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sceneminer/errors.hpp"
#include "sceneminer/eval.hpp"
#include "sceneminer/pipeline.hpp"
#include "sceneminer/synth.hpp"

using namespace sceneminer;
namespace fs = std::filesystem;

namespace {

// small scene and cheap settings so the full pipeline runs in seconds
SceneSpec tiny_scene() {
    SceneSpec spec;
    spec.grid.frame_width = 80;
    spec.grid.frame_height = 48;
    spec.grid.cell_size = 8;
    spec.clip_length = 75;
    auto planted = [&](int x0, int x1, int dir) {
        PlantedActivity act;
        for (int y = 0; y < 6; ++y)
            for (int x = x0; x < x1; ++x)
                act.words.push_back(spec.grid.encode_word(x, y, dir));
        act.probs.assign(act.words.size(), 1.0 / act.words.size());
        return act;
    };
    spec.activities = {planted(0, 3, 0), planted(3, 6, 2), planted(6, 9, 4)};
    spec.state_mixtures = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}};
    spec.transition = {{0.8, 0.2, 0.0}, {0.0, 0.8, 0.2}, {0.2, 0.0, 0.8}};
    spec.n_clips = 100;
    spec.tokens_per_clip = 80;
    spec.noise_rate = 0.01;
    spec.seed = 4242;
    return spec;
}

PipelineConfig tiny_config(const std::string& dir, const std::string& spec_path) {
    PipelineConfig config;
    config.out_dir = dir;
    config.scene_spec_path = spec_path;
    config.train_clips = 60;
    config.hdp.n_sweeps = 40;
    config.hdp.n_burnin = 20;
    config.hdp.seed = 5;
    config.hmm.n_sweeps = 40;
    config.hmm.n_burnin = 20;
    config.hmm.seed = 6;
    config.gp_optimize = false;  // keep the test quick
    return config;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("pipeline runs end to end, skips fresh stages, and streams identically") {
    const fs::path root = fs::temp_directory_path() / "sceneminer_pipeline_test";
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string spec_path = (root / "scene.json").string();
    save_scene_spec(tiny_scene(), spec_path);

    const std::string batch_dir = (root / "batch").string();
    PipelineConfig config = tiny_config(batch_dir, spec_path);

    std::ostringstream log;
    REQUIRE(run_pipeline(config, false, log) == 0);

    for (const char* name :
         {"corpus.jsonl", "gt.json", "corpus_train.jsonl", "corpus_test.jsonl",
          "activities.json", "states.json", "features_train.jsonl", "features_test.jsonl",
          "gp.json", "gpr.json", "labels.jsonl", "anomalies.jsonl", "report.json"}) {
        CHECK(fs::exists(fs::path(batch_dir) / name));
    }

    SUBCASE("a second run skips every stage") {
        std::ostringstream log2;
        REQUIRE(run_pipeline(config, false, log2) == 0);
        const std::string text = log2.str();
        CHECK(text.find("skipped") != std::string::npos);
        CHECK(text.find("running") == std::string::npos);
    }

    SUBCASE("labels cover exactly the test clips") {
        std::vector<int> classes;
        const auto labels = load_labels((fs::path(batch_dir) / "labels.jsonl").string(),
                                        &classes);
        CHECK(labels.size() == 40);  // 100 - 60
        CHECK(labels.front().clip_id == 60);
        CHECK(!classes.empty());
        for (const auto& rec : labels) {
            CHECK(rec.gp_probs.size() == classes.size());
            double sum = 0.0;
            for (double p : rec.gp_probs) sum += p;
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        }
    }

    SUBCASE("stream mode reproduces batch outputs byte for byte") {
        PipelineConfig stream_config = tiny_config((root / "stream").string(), spec_path);
        stream_config.mode = "stream";
        std::ostringstream log3;
        REQUIRE(run_pipeline(stream_config, false, log3) == 0);
        CHECK(slurp((fs::path(batch_dir) / "labels.jsonl").string()) ==
              slurp((root / "stream" / "labels.jsonl").string()));
        CHECK(slurp((fs::path(batch_dir) / "anomalies.jsonl").string()) ==
              slurp((root / "stream" / "anomalies.jsonl").string()));
    }

    SUBCASE("outputs embed the config hash") {
        const std::string first_line = slurp((fs::path(batch_dir) / "labels.jsonl").string());
        CHECK(first_line.find("config_hash") != std::string::npos);
        CHECK(first_line.find("\"schema\":\"labels/1\"") != std::string::npos);
    }

    fs::remove_all(root);
}

TEST_CASE("pipeline failures name the failing stage") {
    const fs::path root = fs::temp_directory_path() / "sceneminer_pipeline_err";
    fs::remove_all(root);
    fs::create_directories(root);

    PipelineConfig config;
    config.out_dir = (root / "out").string();
    config.corpus_path = (root / "missing.jsonl").string();
    config.train_clips = 10;

    std::ostringstream log;
    try {
        run_pipeline(config, false, log);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("stage split") != std::string::npos);
    }
    fs::remove_all(root);
}

TEST_CASE("pipeline config validation") {
    PipelineConfig config;
    SUBCASE("an input source is required") {
        CHECK_THROWS_AS(config.validate(), DataError);
    }
    SUBCASE("two input sources are rejected") {
        config.corpus_path = "a.jsonl";
        config.scene_spec_path = "b.json";
        CHECK_THROWS_AS(config.validate(), DataError);
    }
    SUBCASE("round trip through json") {
        config.corpus_path = "c.jsonl";
        config.fusion.beta_weight = 0.25;
        config.anomaly.rare_word_count = 77;
        const PipelineConfig back = PipelineConfig::from_json(config.to_json());
        CHECK(back.corpus_path == "c.jsonl");
        CHECK(back.fusion.beta_weight == 0.25);
        CHECK(back.anomaly.rare_word_count == 77);
    }
    SUBCASE("bad mode is rejected") {
        config.corpus_path = "c.jsonl";
        config.mode = "sideways";
        CHECK_THROWS_AS(config.validate(), DataError);
    }
}
