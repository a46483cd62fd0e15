#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnaft/checkpoint.hpp"
#include "mnaft/model.hpp"
#include "mnaft/rng.hpp"
#include "mnaft/vocab.hpp"

// Deterministic generator of synthetic image-translation tasks: synthetic
// languages over a shared concept inventory, seeded sentence sampling,
// 5x7 bitmap-font rendering, and instruction construction.

namespace mnaft {

constexpr int kConceptCount = 40;
constexpr int kMinSentenceLen = 3;
constexpr int kMaxSentenceLen = 8;

// --- font --------------------------------------------------------------------

namespace detail {

// 5x7 dot-matrix glyphs for A-Z then 0-9, one string per row, '#' = ink
inline const char* const kGlyphRows[36][7] = {
    {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}, // A
    {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."}, // B
    {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."}, // C
    {"####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."}, // D
    {"#####", "#....", "#....", "####.", "#....", "#....", "#####"}, // E
    {"#####", "#....", "#....", "####.", "#....", "#....", "#...."}, // F
    {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"}, // G
    {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"}, // H
    {".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}, // I
    {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."}, // J
    {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"}, // K
    {"#....", "#....", "#....", "#....", "#....", "#....", "#####"}, // L
    {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"}, // M
    {"#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"}, // N
    {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}, // O
    {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."}, // P
    {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"}, // Q
    {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"}, // R
    {".####", "#....", "#....", ".###.", "....#", "....#", "####."}, // S
    {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."}, // T
    {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."}, // U
    {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."}, // V
    {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"}, // W
    {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"}, // X
    {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."}, // Y
    {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"}, // Z
    {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}, // 0
    {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}, // 1
    {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}, // 2
    {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."}, // 3
    {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}, // 4
    {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}, // 5
    {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."}, // 6
    {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}, // 7
    {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}, // 8
    {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."}, // 9
};

constexpr char kAlphabet[37] = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

inline int glyph_index(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= '0' && c <= '9') return 26 + (c - '0');
    throw std::invalid_argument(std::string("unsupported glyph character '") + c + "'");
}

} // namespace detail

constexpr int kGlyphWidth = 5;
constexpr int kGlyphHeight = 7;
constexpr int kGlyphGap = 1;  // blank columns between glyphs of one token
constexpr int kTokenGap = 3;  // blank columns between tokens
constexpr int kDisplayChars = 3;

struct FontTable {
    bool pixel(char c, int row, int col) const {
        if (row < 0 || row >= kGlyphHeight || col < 0 || col >= kGlyphWidth)
            throw std::invalid_argument("glyph coordinate out of range");
        return detail::kGlyphRows[detail::glyph_index(c)][row][col] == '#';
    }

    uint64_t content_hash() const {
        std::string bits;
        for (int g = 0; g < 36; ++g)
            for (int r = 0; r < kGlyphHeight; ++r) bits += detail::kGlyphRows[g][r];
        return fnv1a64(bits);
    }

    static const FontTable& standard() {
        static const FontTable table;
        return table;
    }
};

// Fixed 3-character display string for a surface token id.
inline std::string token_display(int surface_id) {
    if (surface_id < 0 || surface_id >= kSurfaceVocab)
        throw std::invalid_argument("surface id out of range: " + std::to_string(surface_id));
    int lo = surface_id % 36;
    int hi = (surface_id / 36) % 36;
    return {detail::kAlphabet[lo], detail::kAlphabet[hi], detail::kAlphabet[(lo + hi) % 36]};
}

// --- languages and tasks ------------------------------------------------------

enum class OrderRule { Identity, Reverse, SwapAdjacent };

inline const char* order_rule_name(OrderRule r) {
    switch (r) {
        case OrderRule::Identity: return "identity";
        case OrderRule::Reverse: return "reverse";
        case OrderRule::SwapAdjacent: return "swap-adjacent";
    }
    return "?";
}

inline std::vector<int> apply_order_rule(OrderRule rule, const std::vector<int>& seq) {
    std::vector<int> out = seq;
    switch (rule) {
        case OrderRule::Identity: break;
        case OrderRule::Reverse: std::reverse(out.begin(), out.end()); break;
        case OrderRule::SwapAdjacent:
            for (size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
            break;
    }
    return out;
}

struct LanguageSpec {
    int id = 0;
    std::array<int, kConceptCount> concept_to_surface{};
    OrderRule rule = OrderRule::Identity;

    int surface_to_concept(int surface) const {
        for (int c = 0; c < kConceptCount; ++c)
            if (concept_to_surface[c] == surface) return c;
        throw std::invalid_argument("surface id " + std::to_string(surface) +
                                    " not in language " + std::to_string(id));
    }
};

inline std::vector<LanguageSpec> make_languages(int n, uint64_t seed) {
    if (n < 2) throw std::invalid_argument("need at least 2 languages");
    if (n * kConceptCount > kSurfaceVocab)
        throw std::invalid_argument("surface vocabulary too small for " + std::to_string(n) +
                                    " languages");
    std::vector<int> surfaces(kSurfaceVocab);
    for (int i = 0; i < kSurfaceVocab; ++i) surfaces[i] = i;
    Rng rng(mix_seed(seed, 0x6c616e67)); // "lang"
    rng.shuffle(surfaces);

    std::vector<LanguageSpec> langs;
    for (int i = 0; i < n; ++i) {
        LanguageSpec spec;
        spec.id = i;
        for (int c = 0; c < kConceptCount; ++c)
            spec.concept_to_surface[c] = surfaces[static_cast<size_t>(i) * kConceptCount + c];
        switch (i % 3) {
            case 0: spec.rule = OrderRule::Identity; break;
            case 1: spec.rule = OrderRule::Reverse; break;
            case 2: spec.rule = OrderRule::SwapAdjacent; break;
        }
        langs.push_back(spec);
    }
    return langs;
}

struct TaskSpec {
    int id = 0;
    LanguageSpec source;
    LanguageSpec target;

    TaskSpec() = default;
    TaskSpec(int task_id, LanguageSpec src, LanguageSpec tgt)
        : id(task_id), source(std::move(src)), target(std::move(tgt)) {
        if (source.id == target.id)
            throw std::invalid_argument("task source and target languages must differ");
    }
};

struct Sample {
    PixelGrid image;                 // rendered source text
    std::vector<int> source_tokens;  // surface ids, concept order
    std::vector<int> target_tokens;  // surface ids after the target's order rule
};

// --- rendering ----------------------------------------------------------------

inline PixelGrid render_text(const std::vector<int>& surface_tokens, const FontTable& font,
                             int patch_cols = 6) {
    int width = 0;
    if (!surface_tokens.empty()) {
        int per_token = kDisplayChars * kGlyphWidth + (kDisplayChars - 1) * kGlyphGap;
        width = static_cast<int>(surface_tokens.size()) * per_token +
                (static_cast<int>(surface_tokens.size()) - 1) * kTokenGap;
    }
    int padded = width == 0 ? patch_cols : ((width + patch_cols - 1) / patch_cols) * patch_cols;

    PixelGrid grid;
    grid.height = kGlyphHeight;
    grid.width = padded;
    grid.pixels.assign(static_cast<size_t>(grid.height) * grid.width, 0);

    int x = 0;
    for (size_t t = 0; t < surface_tokens.size(); ++t) {
        if (t > 0) x += kTokenGap;
        std::string display = token_display(surface_tokens[t]);
        for (int gch = 0; gch < kDisplayChars; ++gch) {
            if (gch > 0) x += kGlyphGap;
            for (int r = 0; r < kGlyphHeight; ++r)
                for (int c = 0; c < kGlyphWidth; ++c)
                    if (font.pixel(display[gch], r, c))
                        grid.pixels[static_cast<size_t>(r) * grid.width + x + c] = 1;
            x += kGlyphWidth;
        }
    }
    return grid;
}

inline uint64_t grid_hash(const PixelGrid& grid) {
    std::string repr = std::to_string(grid.height) + "x" + std::to_string(grid.width) + ":";
    repr.reserve(repr.size() + grid.pixels.size());
    for (uint8_t p : grid.pixels) repr += p ? '1' : '0';
    return fnv1a64(repr);
}

// --- sampling -----------------------------------------------------------------

enum class Split { Train = 0, Score = 1, Eval = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Score: return "score";
        case Split::Eval: return "eval";
    }
    return "?";
}

inline Split split_from_name(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "score") return Split::Score;
    if (s == "eval") return Split::Eval;
    throw std::invalid_argument("unknown split '" + s + "'");
}

inline Sample make_sample(const TaskSpec& task, const std::vector<int>& concepts,
                          const FontTable& font = FontTable::standard()) {
    Sample s;
    for (int c : concepts) s.source_tokens.push_back(task.source.concept_to_surface[c]);
    std::vector<int> target_mapped;
    for (int c : concepts) target_mapped.push_back(task.target.concept_to_surface[c]);
    s.target_tokens = apply_order_rule(task.target.rule, target_mapped);
    s.image = render_text(s.source_tokens, font);
    return s;
}

inline std::vector<Sample> sample_dataset(const TaskSpec& task, int n, uint64_t seed, Split split) {
    if (n < 1) throw std::invalid_argument("dataset size must be >= 1");
    Rng rng(mix_seed(mix_seed(seed, static_cast<uint64_t>(task.id) + 0x7461736bULL),
                     static_cast<uint64_t>(split) + 0x73706c74ULL));
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        int len = kMinSentenceLen + rng.next_int(kMaxSentenceLen - kMinSentenceLen + 1);
        std::vector<int> concepts;
        for (int j = 0; j < len; ++j) concepts.push_back(rng.next_int(kConceptCount));
        out.push_back(make_sample(task, concepts));
    }
    return out;
}

enum class ProbeKind { OcrProbe, Translate };

inline std::vector<int> instruction_tokens(const TaskSpec& task, ProbeKind kind) {
    if (kind == ProbeKind::OcrProbe) return {kOcrId};
    return {kTranslateId, lang_token(task.source.id), lang_token(task.target.id)};
}

// probe supervision target: transcription for the OCR probe, translation
// for the translate probe
inline const std::vector<int>& probe_target(const Sample& s, ProbeKind kind) {
    return kind == ProbeKind::OcrProbe ? s.source_tokens : s.target_tokens;
}

// --- dataset files -------------------------------------------------------------

// One record per line:
//   task_id<TAB>split<TAB>source ids<TAB>target ids<TAB>HxW:run-length bits
// Runs alternate starting with background (the first run may be 0).
inline std::string encode_grid_rle(const PixelGrid& grid) {
    std::ostringstream os;
    os << grid.height << "x" << grid.width << ":";
    uint8_t current = 0;
    int run = 0;
    bool first = true;
    for (uint8_t p : grid.pixels) {
        if (p == current) {
            ++run;
        } else {
            os << (first ? "" : " ") << run;
            first = false;
            current = p;
            run = 1;
        }
    }
    os << (first ? "" : " ") << run;
    return os.str();
}

inline PixelGrid decode_grid_rle(const std::string& text) {
    auto xpos = text.find('x');
    auto colon = text.find(':');
    if (xpos == std::string::npos || colon == std::string::npos || xpos > colon)
        throw IoError("malformed grid encoding");
    PixelGrid grid;
    grid.height = std::stoi(text.substr(0, xpos));
    grid.width = std::stoi(text.substr(xpos + 1, colon - xpos - 1));
    grid.pixels.reserve(static_cast<size_t>(grid.height) * grid.width);
    std::istringstream rest(text.substr(colon + 1));
    uint8_t current = 0;
    int run;
    while (rest >> run) {
        for (int i = 0; i < run; ++i) grid.pixels.push_back(current);
        current = current ? 0 : 1;
    }
    if (grid.pixels.size() != static_cast<size_t>(grid.height) * grid.width)
        throw IoError("grid run lengths do not cover the grid");
    return grid;
}

inline std::string ids_to_string(const std::vector<int>& ids) {
    std::ostringstream os;
    for (size_t i = 0; i < ids.size(); ++i) os << (i ? " " : "") << ids[i];
    return os.str();
}

inline std::vector<int> ids_from_string(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    int v;
    while (is >> v) out.push_back(v);
    return out;
}

inline void write_dataset(const std::string& path, int task_id, Split split,
                          const std::vector<Sample>& samples) {
    std::ofstream out(path, std::ios::binary); // binary: stable newlines everywhere
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (const Sample& s : samples) {
        out << task_id << "\t" << split_name(split) << "\t" << ids_to_string(s.source_tokens)
            << "\t" << ids_to_string(s.target_tokens) << "\t" << encode_grid_rle(s.image) << "\n";
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

struct DatasetFile {
    int task_id = -1;
    Split split = Split::Train;
    std::vector<Sample> samples;
};

inline DatasetFile read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    DatasetFile file;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        size_t start = 0;
        for (size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == '\t') {
                fields.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        }
        if (fields.size() != 5) throw IoError("malformed dataset record in '" + path + "'");
        int task_id = std::stoi(fields[0]);
        Split split = split_from_name(fields[1]);
        if (first) {
            file.task_id = task_id;
            file.split = split;
            first = false;
        } else if (task_id != file.task_id || split != file.split) {
            throw IoError("mixed task/split records in '" + path + "'");
        }
        Sample s;
        s.source_tokens = ids_from_string(fields[2]);
        s.target_tokens = ids_from_string(fields[3]);
        s.image = decode_grid_rle(fields[4]);
        file.samples.push_back(std::move(s));
    }
    return file;
}

} // namespace mnaft
