#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sceneminer {

struct CellIndex {
    int x = 0;
    int y = 0;
    bool operator==(const CellIndex&) const = default;
    bool operator<(const CellIndex& o) const { return y != o.y ? y < o.y : x < o.x; }
};

// Spatial quantization grid. The frame is tiled by non-overlapping square
// cells; pixels in a partial border cell are discarded. A visual word is a
// (cell, direction) pair encoded as a single integer index.
struct GridSpec {
    int frame_width = 0;
    int frame_height = 0;
    int cell_size = 8;
    int n_directions = 8;
    double magnitude_threshold = 1.0;  // pixels/frame; averaged flow below it emits no word

    int n_cols() const { return frame_width / cell_size; }
    int n_rows() const { return frame_height / cell_size; }
    int n_cells() const { return n_cols() * n_rows(); }
    int codebook_size() const { return n_cells() * n_directions; }

    void validate() const;  // throws DataError

    struct DecodedWord {
        int cell_x = 0;
        int cell_y = 0;
        int direction = 0;
    };

    int encode_word(int cell_x, int cell_y, int direction) const;
    DecodedWord decode_word(int index) const;

    bool operator==(const GridSpec&) const = default;
};

// Direction bin of a flow vector (dx, dy) with image y growing downward.
// Bin 0 is +x; bins advance counterclockwise once y is flipped upward,
// i.e. bin k covers angles around k*45 deg of atan2(-dy, dx). An angle on
// a bin boundary (odd multiple of 22.5 deg) resolves to the lower bin.
int direction_bin(double dx, double dy);

// Dense per-pixel flow between one frame pair.
struct FlowField {
    int width = 0;
    int height = 0;
    std::vector<float> dx;  // row-major, width*height
    std::vector<float> dy;
};

// Reads a flow file: magic "PIEH", int32 width, int32 height, then
// row-major interleaved float32 (dx, dy) pairs, little-endian.
FlowField read_flow_file(const std::string& path);
void write_flow_file(const FlowField& field, const std::string& path);

// One word per cell whose cell-averaged flow magnitude exceeds the grid
// threshold. Returns a sorted word multiset.
std::vector<int> quantize_flow(const FlowField& field, const GridSpec& grid);

struct ClipDocument {
    std::int64_t clip_id = 0;
    std::int64_t frame_start = 0;
    std::int64_t frame_end = 0;  // exclusive
    std::vector<int> words;      // bag of word indices
};

struct Corpus {
    GridSpec grid;
    int clip_length = 75;
    std::vector<ClipDocument> clips;

    std::size_t total_tokens() const;
    void validate() const;  // ids strictly increasing, ranges contiguous, words in range
};

// Groups per-frame word multisets into consecutive clips of `clip_length`
// frames. A trailing partial clip shorter than clip_length/2 is dropped,
// otherwise kept.
Corpus segment_clips(const std::vector<std::vector<int>>& frame_words,
                     const GridSpec& grid, int clip_length);

void save_corpus(const Corpus& corpus, const std::string& path,
                 const std::string& config_hash = "");
Corpus load_corpus(const std::string& path);

// Sub-corpus covering clips [begin, end) by position.
Corpus slice_corpus(const Corpus& corpus, std::size_t begin, std::size_t end);

}  // namespace sceneminer
