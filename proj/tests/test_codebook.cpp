#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include "sceneminer/codebook.hpp"
#include "sceneminer/errors.hpp"

using namespace sceneminer;

namespace {

GridSpec small_grid() {
    GridSpec grid;
    grid.frame_width = 32;
    grid.frame_height = 16;
    grid.cell_size = 8;
    grid.magnitude_threshold = 1.0;
    return grid;  // 4 x 2 cells, 64 words
}

FlowField uniform_flow(const GridSpec& grid, float dx, float dy) {
    FlowField f;
    f.width = grid.frame_width;
    f.height = grid.frame_height;
    f.dx.assign(static_cast<std::size_t>(f.width) * f.height, dx);
    f.dy.assign(f.dx.size(), dy);
    return f;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("codebook size follows the grid") {
    GridSpec qmul;
    qmul.frame_width = 360;
    qmul.frame_height = 288;
    CHECK(qmul.codebook_size() == 12960);

    GridSpec mit;
    mit.frame_width = 720;
    mit.frame_height = 480;
    CHECK(mit.codebook_size() == 43200);

    // partial border cells are discarded by floor division
    GridSpec ragged;
    ragged.frame_width = 37;
    ragged.frame_height = 17;
    CHECK(ragged.n_cols() == 4);
    CHECK(ragged.n_rows() == 2);
    CHECK(ragged.codebook_size() == 64);
}

TEST_CASE("word encode/decode is a bijection") {
    const GridSpec grid = small_grid();
    for (int idx = 0; idx < grid.codebook_size(); ++idx) {
        const auto w = grid.decode_word(idx);
        CHECK(grid.encode_word(w.cell_x, w.cell_y, w.direction) == idx);
        CHECK(w.cell_x >= 0);
        CHECK(w.cell_x < grid.n_cols());
        CHECK(w.cell_y >= 0);
        CHECK(w.cell_y < grid.n_rows());
        CHECK(w.direction >= 0);
        CHECK(w.direction < 8);
    }
    CHECK_THROWS_AS(grid.decode_word(-1), DataError);
    CHECK_THROWS_AS(grid.decode_word(grid.codebook_size()), DataError);
}

TEST_CASE("direction binning is total with lower-bin ties") {
    // +x motion is bin 0
    CHECK(direction_bin(3.0, 0.0) == 0);
    // upward on screen (negative dy) is bin 2
    CHECK(direction_bin(0.0, -1.0) == 2);
    CHECK(direction_bin(-1.0, 0.0) == 4);
    CHECK(direction_bin(0.0, 1.0) == 6);

    // boundary at 22.5 degrees resolves to bin 0, at 67.5 to bin 1
    const double rad = M_PI / 180.0;
    CHECK(direction_bin(std::cos(22.5 * rad), -std::sin(22.5 * rad)) == 0);
    CHECK(direction_bin(std::cos(67.5 * rad), -std::sin(67.5 * rad)) == 1);
    CHECK(direction_bin(std::cos(337.5 * rad), -std::sin(337.5 * rad)) == 7);

    // every integer degree maps to the nearest bin (none sit on a boundary)
    for (int deg = 0; deg < 360; ++deg) {
        const int bin = direction_bin(std::cos(deg * rad), -std::sin(deg * rad));
        CHECK(bin == ((deg + 22) / 45) % 8);
    }
}

TEST_CASE("quantize_flow emits one word per moving cell") {
    const GridSpec grid = small_grid();

    SUBCASE("all-zero flow gives no words") {
        CHECK(quantize_flow(uniform_flow(grid, 0.f, 0.f), grid).empty());
    }

    SUBCASE("uniform rightward flow gives every cell direction 0") {
        const auto words = quantize_flow(uniform_flow(grid, 3.f, 0.f), grid);
        REQUIRE(static_cast<int>(words.size()) == grid.n_cells());
        for (int w : words) CHECK(grid.decode_word(w).direction == 0);
    }

    SUBCASE("single-cell averaged motion lands in that cell") {
        FlowField f = uniform_flow(grid, 0.f, 0.f);
        // cell (1, 0): put (3, 0) in every pixel of the cell
        for (int py = 0; py < 8; ++py)
            for (int px = 8; px < 16; ++px) f.dx[py * f.width + px] = 3.0f;
        const auto words = quantize_flow(f, grid);
        REQUIRE(words.size() == 1);
        const auto w = grid.decode_word(words[0]);
        CHECK(w.cell_x == 1);
        CHECK(w.cell_y == 0);
        CHECK(w.direction == 0);
    }

    SUBCASE("sub-threshold average emits nothing") {
        CHECK(quantize_flow(uniform_flow(grid, 0.5f, 0.f), grid).empty());
    }

    SUBCASE("dimension mismatch and non-finite flow are rejected") {
        FlowField f = uniform_flow(grid, 1.f, 1.f);
        f.width += 8;
        CHECK_THROWS_AS(quantize_flow(f, grid), DataError);

        FlowField g = uniform_flow(grid, 1.f, 1.f);
        g.dx[5] = std::numeric_limits<float>::quiet_NaN();
        CHECK_THROWS_AS(quantize_flow(g, grid), DataError);
    }
}

TEST_CASE("segment_clips groups frames and drops short tails") {
    const GridSpec grid = small_grid();
    auto frames = [&](int n) {
        return std::vector<std::vector<int>>(n, std::vector<int>{1, 2});
    };

    CHECK(segment_clips(frames(150), grid, 75).clips.size() == 2);
    CHECK(segment_clips(frames(75), grid, 75).clips.size() == 1);
    CHECK(segment_clips(frames(80), grid, 75).clips.size() == 1);   // 5-frame tail dropped
    CHECK(segment_clips(frames(112), grid, 75).clips.size() == 1);  // 37 < 75/2 dropped
    CHECK(segment_clips(frames(113), grid, 75).clips.size() == 2);  // 38 >= 75/2 kept
    CHECK(segment_clips({}, grid, 75).clips.empty());
    CHECK_THROWS_AS(segment_clips(frames(10), grid, 0), DataError);

    const Corpus c = segment_clips(frames(150), grid, 75);
    CHECK(c.clips[0].frame_start == 0);
    CHECK(c.clips[0].frame_end == 75);
    CHECK(c.clips[1].frame_start == 75);
    CHECK(c.clips[0].words.size() == 150);  // 2 words x 75 frames
}

TEST_CASE("word count per clip is bounded by cells x frames") {
    const GridSpec grid = small_grid();
    std::vector<std::vector<int>> frames;
    for (int i = 0; i < 80; ++i)
        frames.push_back(quantize_flow(uniform_flow(grid, 2.f, 1.f), grid));
    const Corpus c = segment_clips(frames, grid, 40);
    for (const auto& clip : c.clips)
        CHECK(clip.words.size() <=
              static_cast<std::size_t>(grid.n_cells()) * (clip.frame_end - clip.frame_start));
}

TEST_CASE("corpus save/load round trip") {
    const GridSpec grid = small_grid();
    std::vector<std::vector<int>> frames(120, std::vector<int>{0, 5, 5, 63});
    const Corpus corpus = segment_clips(frames, grid, 40);
    const std::string path = temp_path("sceneminer_corpus_test.jsonl");

    save_corpus(corpus, path, "deadbeef");
    const Corpus loaded = load_corpus(path);
    REQUIRE(loaded.clips.size() == corpus.clips.size());
    CHECK(loaded.grid == corpus.grid);
    CHECK(loaded.clip_length == corpus.clip_length);
    for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
        CHECK(loaded.clips[i].clip_id == corpus.clips[i].clip_id);
        CHECK(loaded.clips[i].frame_start == corpus.clips[i].frame_start);
        CHECK(loaded.clips[i].frame_end == corpus.clips[i].frame_end);
        CHECK(loaded.clips[i].words == corpus.clips[i].words);
    }
    std::remove(path.c_str());
}

TEST_CASE("corpus load rejects bad input with line context") {
    const std::string path = temp_path("sceneminer_corpus_bad.jsonl");

    SUBCASE("empty file with valid header is an empty corpus") {
        std::FILE* f = std::fopen(path.c_str(), "w");
        std::fputs("{\"schema\":\"corpus/1\",\"frame_width\":32,\"frame_height\":16,"
                   "\"cell_size\":8,\"n_directions\":8,\"clip_length\":75}\n", f);
        std::fclose(f);
        CHECK(load_corpus(path).clips.empty());
    }

    SUBCASE("out-of-range word index names the clip") {
        std::FILE* f = std::fopen(path.c_str(), "w");
        std::fputs("{\"schema\":\"corpus/1\",\"frame_width\":32,\"frame_height\":16,"
                   "\"cell_size\":8,\"n_directions\":8,\"clip_length\":75}\n", f);
        std::fputs("{\"clip_id\":3,\"frame_start\":0,\"frame_end\":75,\"words\":[64]}\n", f);
        std::fclose(f);
        try {
            load_corpus(path);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("clip 3") != std::string::npos);
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }

    SUBCASE("malformed line is reported with its number") {
        std::FILE* f = std::fopen(path.c_str(), "w");
        std::fputs("{\"schema\":\"corpus/1\",\"frame_width\":32,\"frame_height\":16,"
                   "\"cell_size\":8,\"n_directions\":8,\"clip_length\":75}\n", f);
        std::fputs("{not json\n", f);
        std::fclose(f);
        try {
            load_corpus(path);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }

    SUBCASE("schema mismatch is rejected") {
        std::FILE* f = std::fopen(path.c_str(), "w");
        std::fputs("{\"schema\":\"corpus/9\",\"frame_width\":32,\"frame_height\":16,"
                   "\"cell_size\":8,\"n_directions\":8,\"clip_length\":75}\n", f);
        std::fclose(f);
        CHECK_THROWS_AS(load_corpus(path), DataError);
    }
    std::remove(path.c_str());
}

TEST_CASE("flow file round trip and validation") {
    const GridSpec grid = small_grid();
    FlowField f = uniform_flow(grid, 1.5f, -0.5f);
    const std::string path = temp_path("sceneminer_flow_test.flo");
    write_flow_file(f, path);
    const FlowField g = read_flow_file(path);
    CHECK(g.width == f.width);
    CHECK(g.height == f.height);
    CHECK(g.dx == f.dx);
    CHECK(g.dy == f.dy);

    // corrupt the magic
    std::FILE* fp = std::fopen(path.c_str(), "r+b");
    std::fputs("XXXX", fp);
    std::fclose(fp);
    CHECK_THROWS_AS(read_flow_file(path), DataError);
    std::remove(path.c_str());
}
