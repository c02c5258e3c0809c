#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "sceneminer/errors.hpp"
#include "sceneminer/representation.hpp"

using namespace sceneminer;

namespace {

ClipDocument make_clip(std::vector<int> words, std::int64_t id = 0) {
    ClipDocument clip;
    clip.clip_id = id;
    clip.frame_start = id * 75;
    clip.frame_end = (id + 1) * 75;
    clip.words = std::move(words);
    return clip;
}

ActivityWordSet make_set(std::vector<int> words, int id = 0) {
    ActivityWordSet set;
    set.activity_id = id;
    set.words = std::move(words);
    std::sort(set.words.begin(), set.words.end());
    return set;
}

}  // namespace

TEST_CASE("activity_word_set keeps the minimal 90% prefix") {
    SUBCASE("two of four words reach the cutoff") {
        const auto set = activity_word_set({0.5, 0.3, 0.15, 0.05}, 0.9, 3);
        CHECK(set.activity_id == 3);
        CHECK(set.words == std::vector<int>{0, 1});
        CHECK(set.covered_mass == doctest::Approx(0.8));
    }
    SUBCASE("point mass keeps exactly that word") {
        const auto set = activity_word_set({0.0, 1.0, 0.0}, 0.9);
        CHECK(set.words == std::vector<int>{1});
    }
    SUBCASE("cutoff 1.0 keeps every positive-probability word") {
        const auto set = activity_word_set({0.25, 0.0, 0.5, 0.25}, 1.0);
        CHECK(set.words == std::vector<int>{0, 2, 3});
    }
    SUBCASE("the top word survives a tiny cutoff") {
        const auto set = activity_word_set({0.95, 0.05}, 0.9);
        CHECK(set.words == std::vector<int>{0});
    }
    SUBCASE("probability ties break by ascending word index") {
        const auto set = activity_word_set({0.2, 0.4, 0.2, 0.2}, 0.8);
        CHECK(set.words == std::vector<int>{0, 1, 2});
    }
    SUBCASE("non-normalized distributions are rejected") {
        CHECK_THROWS_AS(activity_word_set({0.5, 0.6}, 0.9), DataError);
    }
}

TEST_CASE("clip_feature computes intersection shares") {
    SUBCASE("half the tokens inside the set") {
        const auto feat = clip_feature(make_clip({1, 2, 3, 4}), {make_set({2, 3, 9})});
        CHECK(feat.c.size() == 1);
        CHECK(feat.c[0] == doctest::Approx(0.5));
        CHECK(feat.n_words == 4);
        CHECK(feat.n_unassigned == 2);
        CHECK(feat.unassigned_words == std::vector<int>{1, 4});
    }
    SUBCASE("empty clip gives a zero vector") {
        const auto feat = clip_feature(make_clip({}), {make_set({1}), make_set({2})});
        CHECK(feat.c == std::vector<double>{0.0, 0.0});
        CHECK(feat.n_words == 0);
        CHECK(feat.n_unassigned == 0);
        CHECK(feat.unassigned_words.empty());
    }
    SUBCASE("fully covered clip scores 1.0") {
        const auto feat = clip_feature(make_clip({5, 5, 6}), {make_set({5, 6})});
        CHECK(feat.c[0] == doctest::Approx(1.0));
        CHECK(feat.n_unassigned == 0);
    }
    SUBCASE("repeated words count per token") {
        const auto feat = clip_feature(make_clip({7, 7, 7, 1}), {make_set({7})});
        CHECK(feat.c[0] == doctest::Approx(0.75));
    }
}

TEST_CASE("clip_feature token-arithmetic properties") {
    const std::vector<ActivityWordSet> sets = {make_set({1, 2}), make_set({2, 3})};
    const ClipDocument base = make_clip({1, 2, 3, 3, 9});
    const auto f0 = clip_feature(base, sets);

    SUBCASE("a token outside every set scales all entries by N/(N+1)") {
        ClipDocument grown = base;
        grown.words.push_back(12);  // in no set
        const auto f1 = clip_feature(grown, sets);
        const double n = static_cast<double>(f0.n_words);
        for (std::size_t k = 0; k < sets.size(); ++k)
            CHECK(f1.c[k] == doctest::Approx(f0.c[k] * n / (n + 1.0)).epsilon(1e-12));
    }

    SUBCASE("a token inside every set raises each intersection count by one") {
        ClipDocument grown = base;
        grown.words.push_back(2);  // in both sets
        const auto f1 = clip_feature(grown, sets);
        const double n = static_cast<double>(f0.n_words);
        for (std::size_t k = 0; k < sets.size(); ++k)
            CHECK(f1.c[k] == doctest::Approx((f0.c[k] * n + 1.0) / (n + 1.0)).epsilon(1e-12));
    }

    SUBCASE("assigned plus unassigned tokens cover the clip") {
        std::int64_t covered = 0;
        for (int w : base.words) {
            bool in_any = false;
            for (const auto& s : sets)
                if (std::binary_search(s.words.begin(), s.words.end(), w)) in_any = true;
            if (in_any) ++covered;
        }
        CHECK(covered + f0.n_unassigned == f0.n_words);
    }
}

TEST_CASE("build_training_set labels typical clips and drops the rest") {
    Corpus corpus;
    corpus.grid.frame_width = 16;
    corpus.grid.frame_height = 8;
    corpus.grid.cell_size = 8;  // 16 words
    for (int t = 0; t < 10; ++t) {
        ClipDocument clip;
        clip.clip_id = t;
        clip.frame_start = 75ll * t;
        clip.frame_end = 75ll * (t + 1);
        clip.words = {1, 2, 3, 4};
        corpus.clips.push_back(std::move(clip));
    }

    ActivityModel activities;
    activities.codebook_size = 16;
    activities.n_topics = 2;
    activities.phi = {{0}, {0}};
    activities.phi[0].assign(16, 0.0);
    activities.phi[0][1] = 0.6;
    activities.phi[0][2] = 0.4;
    activities.phi[1].assign(16, 0.0);
    activities.phi[1][3] = 0.7;
    activities.phi[1][4] = 0.3;
    activities.counts = {60, 40};
    activities.typical = {0, 1};

    StateModel states;
    states.codebook_size = 16;
    states.n_states = 3;
    states.state_seq = {0, 0, 1, 1, 2, 0, 1, 0, 0, 1};  // state 2 is not typical
    states.typical = {0, 1};

    SUBCASE("non-typical clips are dropped") {
        const TrainingSet ts = build_training_set(corpus, activities, states, 0.9);
        CHECK(ts.features.size() == 9);
        CHECK(ts.labels.size() == 9);
        CHECK(ts.dropped == 1);
        for (int label : ts.labels) CHECK((label == 0 || label == 1));
    }

    SUBCASE("all clips kept when every state is typical") {
        StateModel all = states;
        all.typical = {0, 1, 2};
        const TrainingSet ts = build_training_set(corpus, activities, all, 0.9);
        CHECK(ts.features.size() == corpus.clips.size());
        CHECK(ts.dropped == 0);
    }

    SUBCASE("length mismatch is an error") {
        StateModel bad = states;
        bad.state_seq.pop_back();
        CHECK_THROWS_AS(build_training_set(corpus, activities, bad, 0.9), DataError);
    }
}

TEST_CASE("feature file round trip") {
    FeatureFile file;
    file.activities = {0, 2};
    file.word_sets = {make_set({1, 2}, 0), make_set({3}, 2)};
    ClipFeature a;
    a.clip_id = 0;
    a.c = {0.5, 0.25};
    a.n_words = 4;
    a.n_unassigned = 1;
    ClipFeature b;
    b.clip_id = 1;
    b.c = {0.0, 1.0};
    b.n_words = 2;
    b.n_unassigned = 0;
    file.features = {a, b};
    file.labels = {std::optional<int>{3}, std::nullopt};

    const std::string path =
        (std::filesystem::temp_directory_path() / "sceneminer_features_test.jsonl").string();
    save_features(file, path, "cafebabe");
    const FeatureFile loaded = load_features(path);
    CHECK(loaded.activities == file.activities);
    REQUIRE(loaded.word_sets.size() == 2);
    CHECK(loaded.word_sets[1].words == std::vector<int>{3});
    REQUIRE(loaded.features.size() == 2);
    CHECK(loaded.features[0].c == file.features[0].c);
    CHECK(loaded.labels[0] == std::optional<int>{3});
    CHECK(!loaded.labels[1].has_value());
    std::remove(path.c_str());
}
