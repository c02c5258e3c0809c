#include "sceneminer/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "sceneminer/errors.hpp"

namespace sceneminer {

using nlohmann::json;

void GridSpec::validate() const {
    if (cell_size <= 0) throw DataError("GridSpec: cell_size must be positive");
    if (frame_width < cell_size || frame_height < cell_size)
        throw DataError("GridSpec: frame must be at least one cell in each dimension");
    if (n_directions != 8) throw DataError("GridSpec: n_directions is fixed at 8");
    if (!(magnitude_threshold >= 0.0) || !std::isfinite(magnitude_threshold))
        throw DataError("GridSpec: magnitude_threshold must be finite and >= 0");
}

int GridSpec::encode_word(int cell_x, int cell_y, int direction) const {
    return ((cell_y * n_cols()) + cell_x) * n_directions + direction;
}

GridSpec::DecodedWord GridSpec::decode_word(int index) const {
    if (index < 0 || index >= codebook_size())
        throw DataError("decode_word: index " + std::to_string(index) +
                        " outside codebook of size " + std::to_string(codebook_size()));
    DecodedWord w;
    w.direction = index % n_directions;
    const int cell = index / n_directions;
    w.cell_x = cell % n_cols();
    w.cell_y = cell / n_cols();
    return w;
}

int direction_bin(double dx, double dy) {
    // Angle measured counterclockwise from +x with y flipped upward.
    double deg = std::atan2(-dy, dx) * 180.0 / M_PI;
    if (deg < 0.0) deg += 360.0;
    // Round half *down* so a boundary at an odd multiple of 22.5 resolves
    // to the lower bin.
    int bin = static_cast<int>(std::ceil(deg / 45.0 - 0.5));
    return ((bin % 8) + 8) % 8;
}

FlowField read_flow_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_flow_file: cannot open " + path);

    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "PIEH", 4) != 0)
        throw DataError("read_flow_file: bad magic in " + path);

    std::int32_t w = 0, h = 0;
    f.read(reinterpret_cast<char*>(&w), 4);
    f.read(reinterpret_cast<char*>(&h), 4);
    if (!f || w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16)
        throw DataError("read_flow_file: bad dimensions in " + path);

    FlowField field;
    field.width = w;
    field.height = h;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    std::vector<float> interleaved(2 * n);
    f.read(reinterpret_cast<char*>(interleaved.data()),
           static_cast<std::streamsize>(2 * n * sizeof(float)));
    if (!f) throw DataError("read_flow_file: truncated data in " + path);

    field.dx.resize(n);
    field.dy.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        field.dx[i] = interleaved[2 * i];
        field.dy[i] = interleaved[2 * i + 1];
    }
    return field;
}

void write_flow_file(const FlowField& field, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("write_flow_file: cannot open " + path);
    f.write("PIEH", 4);
    std::int32_t w = field.width, h = field.height;
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(&h), 4);
    const std::size_t n = static_cast<std::size_t>(w) * h;
    std::vector<float> interleaved(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        interleaved[2 * i] = field.dx[i];
        interleaved[2 * i + 1] = field.dy[i];
    }
    f.write(reinterpret_cast<const char*>(interleaved.data()),
            static_cast<std::streamsize>(2 * n * sizeof(float)));
    if (!f) throw DataError("write_flow_file: write failed for " + path);
}

std::vector<int> quantize_flow(const FlowField& field, const GridSpec& grid) {
    grid.validate();
    if (field.width != grid.frame_width || field.height != grid.frame_height)
        throw DataError("quantize_flow: flow field dimensions do not match grid");
    if (field.dx.size() != static_cast<std::size_t>(field.width) * field.height ||
        field.dy.size() != field.dx.size())
        throw DataError("quantize_flow: flow buffer size mismatch");

    std::vector<int> words;
    for (int cy = 0; cy < grid.n_rows(); ++cy) {
        for (int cx = 0; cx < grid.n_cols(); ++cx) {
            double sx = 0.0, sy = 0.0;
            for (int py = cy * grid.cell_size; py < (cy + 1) * grid.cell_size; ++py) {
                const std::size_t row = static_cast<std::size_t>(py) * field.width;
                for (int px = cx * grid.cell_size; px < (cx + 1) * grid.cell_size; ++px) {
                    const float vx = field.dx[row + px];
                    const float vy = field.dy[row + px];
                    if (!std::isfinite(vx) || !std::isfinite(vy))
                        throw DataError("quantize_flow: non-finite flow vector");
                    sx += vx;
                    sy += vy;
                }
            }
            const double inv = 1.0 / (grid.cell_size * grid.cell_size);
            const double ax = sx * inv, ay = sy * inv;
            if (std::hypot(ax, ay) > grid.magnitude_threshold)
                words.push_back(grid.encode_word(cx, cy, direction_bin(ax, ay)));
        }
    }
    std::sort(words.begin(), words.end());
    return words;
}

std::size_t Corpus::total_tokens() const {
    std::size_t n = 0;
    for (const auto& c : clips) n += c.words.size();
    return n;
}

void Corpus::validate() const {
    grid.validate();
    if (clip_length < 1) throw DataError("Corpus: clip_length must be >= 1");
    const int vocab = grid.codebook_size();
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto& c = clips[i];
        if (c.frame_end <= c.frame_start)
            throw DataError("Corpus: empty frame range for clip " + std::to_string(c.clip_id));
        if (i > 0) {
            if (c.clip_id <= clips[i - 1].clip_id)
                throw DataError("Corpus: clip ids not strictly increasing at clip " +
                                std::to_string(c.clip_id));
            if (c.frame_start != clips[i - 1].frame_end)
                throw DataError("Corpus: frame ranges not contiguous at clip " +
                                std::to_string(c.clip_id));
        }
        for (int w : c.words)
            if (w < 0 || w >= vocab)
                throw DataError("Corpus: word index " + std::to_string(w) +
                                " out of range in clip " + std::to_string(c.clip_id));
    }
}

Corpus segment_clips(const std::vector<std::vector<int>>& frame_words,
                     const GridSpec& grid, int clip_length) {
    grid.validate();
    if (clip_length < 1) throw DataError("segment_clips: clip_length must be >= 1");

    Corpus corpus;
    corpus.grid = grid;
    corpus.clip_length = clip_length;

    const std::size_t n_frames = frame_words.size();
    std::size_t start = 0;
    std::int64_t next_id = 0;
    while (start < n_frames) {
        const std::size_t len = std::min<std::size_t>(clip_length, n_frames - start);
        if (len < static_cast<std::size_t>(clip_length) && 2 * len < static_cast<std::size_t>(clip_length))
            break;  // drop short trailing remainder
        ClipDocument clip;
        clip.clip_id = next_id++;
        clip.frame_start = static_cast<std::int64_t>(start);
        clip.frame_end = static_cast<std::int64_t>(start + len);
        for (std::size_t f = start; f < start + len; ++f)
            clip.words.insert(clip.words.end(), frame_words[f].begin(), frame_words[f].end());
        corpus.clips.push_back(std::move(clip));
        start += len;
    }
    corpus.validate();
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path,
                 const std::string& config_hash) {
    corpus.validate();
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("save_corpus: cannot open " + path);

    json header = {
        {"schema", "corpus/1"},
        {"frame_width", corpus.grid.frame_width},
        {"frame_height", corpus.grid.frame_height},
        {"cell_size", corpus.grid.cell_size},
        {"n_directions", corpus.grid.n_directions},
        {"clip_length", corpus.clip_length},
        {"config_hash", config_hash},
    };
    f << header.dump() << '\n';
    for (const auto& c : corpus.clips) {
        json line = {{"clip_id", c.clip_id},
                     {"frame_start", c.frame_start},
                     {"frame_end", c.frame_end},
                     {"words", c.words}};
        f << line.dump() << '\n';
    }
    if (!f) throw DataError("save_corpus: write failed for " + path);
}

Corpus load_corpus(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("load_corpus: cannot open " + path);

    std::string line;
    if (!std::getline(f, line)) throw DataError("load_corpus: empty file " + path);

    Corpus corpus;
    try {
        json header = json::parse(line);
        if (header.at("schema").get<std::string>() != "corpus/1")
            throw DataError("load_corpus: unsupported schema in " + path);
        corpus.grid.frame_width = header.at("frame_width").get<int>();
        corpus.grid.frame_height = header.at("frame_height").get<int>();
        corpus.grid.cell_size = header.at("cell_size").get<int>();
        corpus.grid.n_directions = header.at("n_directions").get<int>();
        corpus.clip_length = header.at("clip_length").get<int>();
    } catch (const json::exception& e) {
        throw DataError("load_corpus: bad header line 1 of " + path + ": " + e.what());
    }

    const int vocab = corpus.grid.codebook_size();
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        ClipDocument clip;
        try {
            json j = json::parse(line);
            clip.clip_id = j.at("clip_id").get<std::int64_t>();
            clip.frame_start = j.at("frame_start").get<std::int64_t>();
            clip.frame_end = j.at("frame_end").get<std::int64_t>();
            clip.words = j.at("words").get<std::vector<int>>();
        } catch (const json::exception& e) {
            throw DataError("load_corpus: malformed line " + std::to_string(line_no) +
                            " of " + path + ": " + e.what());
        }
        for (int w : clip.words)
            if (w < 0 || w >= vocab)
                throw DataError("load_corpus: line " + std::to_string(line_no) +
                                ": word index " + std::to_string(w) +
                                " out of range for clip " + std::to_string(clip.clip_id));
        corpus.clips.push_back(std::move(clip));
    }
    corpus.validate();
    return corpus;
}

Corpus slice_corpus(const Corpus& corpus, std::size_t begin, std::size_t end) {
    if (begin > end || end > corpus.clips.size())
        throw DataError("slice_corpus: invalid range");
    Corpus out;
    out.grid = corpus.grid;
    out.clip_length = corpus.clip_length;
    out.clips.assign(corpus.clips.begin() + begin, corpus.clips.begin() + end);
    return out;
}

}  // namespace sceneminer
