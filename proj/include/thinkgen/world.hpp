#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "thinkgen/array.hpp"
#include "thinkgen/error.hpp"
#include "thinkgen/rng.hpp"
#include "thinkgen/vocab.hpp"

namespace thinkgen {

// Grid geometry: 4x4 object cells of 4x4 pixels each, 3 color channels plus
// one glyph channel. Small enough for minutes-scale training, big enough for
// 6 objects and a 5-letter word.
constexpr int kGridH = 16;
constexpr int kGridW = 16;
constexpr int kGridC = 4;
constexpr int kCells = 4;     // cells per side
constexpr int kCellPx = 4;    // pixels per cell side
constexpr int kGlyphLanes = 4;
constexpr int kGlyphSlots = 5;
constexpr int kMaxObjects = 6;

enum class ShapeKind : int { Cube = 0, Ball = 1, Tri = 2 };
enum class ColorKind : int { Red = 0, Green = 1, Blue = 2, Yellow = 3, Purple = 4, Cyan = 5 };
enum class Region : int { Top = 0, Bottom = 1, Left = 2, Right = 3 };

constexpr int kNumShapes = 3;
constexpr int kNumColors = 6;
constexpr int kNumRegions = 4;
constexpr int kNumLetters = 8; // A..H

inline const char* shape_name(ShapeKind s) {
    static const char* names[] = {"cube", "ball", "tri"};
    return names[static_cast<int>(s)];
}
inline const char* color_name(ColorKind c) {
    static const char* names[] = {"red", "green", "blue", "yellow", "purple", "cyan"};
    return names[static_cast<int>(c)];
}
inline const char* region_name(Region r) {
    static const char* names[] = {"top", "bottom", "left", "right"};
    return names[static_cast<int>(r)];
}
inline const char* count_name(int n) {
    static const char* names[] = {"", "one", "two", "three"};
    return names[n];
}

inline std::array<real, 3> color_rgb(ColorKind c) {
    switch (c) {
        case ColorKind::Red: return {1, 0, 0};
        case ColorKind::Green: return {0, 1, 0};
        case ColorKind::Blue: return {0, 0, 1};
        case ColorKind::Yellow: return {1, 1, 0};
        case ColorKind::Purple: return {1, 0, 1};
        case ColorKind::Cyan: return {0, 1, 1};
    }
    return {0, 0, 0};
}

// 4x4 paint masks, one per shape, mutually distinct.
inline const std::array<uint16_t, kNumShapes>& shape_masks() {
    static const std::array<uint16_t, kNumShapes> masks = {
        0b1111111111111111, // cube: full block
        0b0110111111110110, // ball: rounded
        0b0001001101111111, // tri: lower-right wedge
    };
    return masks;
}
inline bool shape_mask_px(ShapeKind s, int pr, int pc) {
    return (shape_masks()[static_cast<size_t>(s)] >> (15 - (pr * 4 + pc))) & 1;
}

// 3x3 letter font for A..H; index 8 is the blank pattern.
inline const std::array<uint16_t, kNumLetters + 1>& letter_font() {
    static const std::array<uint16_t, kNumLetters + 1> font = {
        0b010111101, // A
        0b111110111, // B
        0b011100011, // C
        0b110011110, // D
        0b111010111, // E
        0b111110100, // F
        0b011101111, // G
        0b101111101, // H
        0b000000000, // blank
    };
    return font;
}
inline bool letter_px(int letter, int pr, int pc) {
    return (letter_font()[static_cast<size_t>(letter)] >> (8 - (pr * 3 + pc))) & 1;
}

struct SceneObject {
    ShapeKind shape = ShapeKind::Cube;
    ColorKind color = ColorKind::Red;
    int r = 0, c = 0; // cell coordinates, 0..3

    bool operator==(const SceneObject& o) const {
        return shape == o.shape && color == o.color && r == o.r && c == o.c;
    }
};

// Ground-truth world state; every reward derives from it.
struct Scene {
    std::vector<SceneObject> objects;
    std::string glyph;  // word of letters A..H, empty = none
    int glyph_lane = 0; // 0..3

    void validate() const {
        if (objects.size() > kMaxObjects) throw SceneError("too many objects");
        if (glyph.size() > kGlyphSlots) throw SceneError("glyph word too long");
        if (glyph_lane < 0 || glyph_lane >= kGlyphLanes) throw SceneError("bad glyph lane");
        for (char ch : glyph)
            if (ch < 'A' || ch >= 'A' + kNumLetters) throw SceneError("glyph letter out of alphabet");
        for (size_t i = 0; i < objects.size(); ++i) {
            const auto& o = objects[i];
            if (o.r < 0 || o.r >= kCells || o.c < 0 || o.c >= kCells) throw SceneError("object cell out of range");
            for (size_t j = i + 1; j < objects.size(); ++j)
                if (objects[j].r == o.r && objects[j].c == o.c) throw SceneError("overlapping paint regions");
        }
    }

    Scene normalized() const {
        Scene s = *this;
        std::sort(s.objects.begin(), s.objects.end(), [](const SceneObject& a, const SceneObject& b) {
            if (a.r != b.r) return a.r < b.r;
            if (a.c != b.c) return a.c < b.c;
            return static_cast<int>(a.shape) < static_cast<int>(b.shape);
        });
        return s;
    }

    bool operator==(const Scene& o) const {
        Scene a = normalized(), b = o.normalized();
        return a.objects == b.objects && a.glyph == b.glyph && (a.glyph.empty() || a.glyph_lane == b.glyph_lane);
    }
};

// Deterministic oracle renderer: objects paint their shape mask in the color
// channels of their cell; the glyph word paints the letter font into the
// glyph channel. Background is 0 everywhere.
inline Array render(const Scene& scene) {
    scene.validate();
    Array g = Array::zeros({kGridH, kGridW, kGridC});
    auto px = [&](int y, int x, int ch) -> real& {
        return g.data[static_cast<size_t>((y * kGridW + x) * kGridC + ch)];
    };
    for (const auto& o : scene.objects) {
        const auto rgb = color_rgb(o.color);
        for (int pr = 0; pr < kCellPx; ++pr)
            for (int pc = 0; pc < kCellPx; ++pc) {
                if (!shape_mask_px(o.shape, pr, pc)) continue;
                const int y = o.r * kCellPx + pr, x = o.c * kCellPx + pc;
                for (int ch = 0; ch < 3; ++ch) {
                    if (rgb[static_cast<size_t>(ch)] == real(0)) continue;
                    if (px(y, x, ch) != real(0)) throw SceneError("overlapping paint regions");
                    px(y, x, ch) = rgb[static_cast<size_t>(ch)];
                }
            }
    }
    for (size_t i = 0; i < scene.glyph.size(); ++i) {
        const int letter = scene.glyph[i] - 'A';
        for (int pr = 0; pr < 3; ++pr)
            for (int pc = 0; pc < 3; ++pc)
                if (letter_px(letter, pr, pc))
                    px(scene.glyph_lane * kCellPx + pr, static_cast<int>(i) * 3 + pc, 3) = real(1);
    }
    return g;
}

struct ParsedObject {
    SceneObject obj;
    double confidence = 0.0;
};
struct ParsedWord {
    std::string word;
    int lane = 0;
    double confidence = 1.0; // weakest letter
};
struct ParsedScene {
    std::vector<ParsedObject> objects;
    std::vector<ParsedWord> words;

    Scene to_scene() const {
        Scene s;
        for (const auto& po : objects) s.objects.push_back(po.obj);
        if (!words.empty()) {
            s.glyph = words[0].word;
            s.glyph_lane = words[0].lane;
        }
        return s;
    }
};

// mean per-pixel agreement between a block and a target pattern, in [0,1]
inline double pattern_confidence(const Array& grid, int y0, int x0, int h, int w,
                                 const std::vector<std::array<double, 4>>& target, int ch0, int ch1) {
    double acc = 0.0;
    int n = 0;
    for (int pr = 0; pr < h; ++pr)
        for (int pc = 0; pc < w; ++pc)
            for (int ch = ch0; ch < ch1; ++ch) {
                const double got =
                    static_cast<double>(grid.data[static_cast<size_t>(((y0 + pr) * kGridW + x0 + pc) * kGridC + ch)]);
                const double want = target[static_cast<size_t>(pr * w + pc)][static_cast<size_t>(ch)];
                acc += 1.0 - std::min(1.0, std::abs(got - want));
                ++n;
            }
    return acc / n;
}

// Nearest-pattern decoding per cell and glyph slot. Low confidence is data,
// not an error: noise decodes to an empty or low-confidence scene.
inline ParsedScene parse_scene(const Array& grid, double tolerance = 0.5) {
    if (grid.shape != Shape{kGridH, kGridW, kGridC}) throw ShapeError("parse_scene: grid shape " + shape_str(grid.shape));
    ParsedScene out;
    std::vector<std::array<double, 4>> target(kCellPx * kCellPx);
    for (int r = 0; r < kCells; ++r)
        for (int c = 0; c < kCells; ++c) {
            double best = pattern_confidence(grid, r * kCellPx, c * kCellPx, kCellPx, kCellPx,
                                             std::vector<std::array<double, 4>>(kCellPx * kCellPx, {0, 0, 0, 0}), 0, 3);
            int best_shape = -1, best_color = -1;
            for (int s = 0; s < kNumShapes; ++s)
                for (int col = 0; col < kNumColors; ++col) {
                    const auto rgb = color_rgb(static_cast<ColorKind>(col));
                    for (int pr = 0; pr < kCellPx; ++pr)
                        for (int pc = 0; pc < kCellPx; ++pc) {
                            const bool on = shape_mask_px(static_cast<ShapeKind>(s), pr, pc);
                            auto& t = target[static_cast<size_t>(pr * kCellPx + pc)];
                            for (int ch = 0; ch < 3; ++ch) t[static_cast<size_t>(ch)] = on ? rgb[static_cast<size_t>(ch)] : 0.0;
                        }
                    const double conf = pattern_confidence(grid, r * kCellPx, c * kCellPx, kCellPx, kCellPx, target, 0, 3);
                    if (conf > best) {
                        best = conf;
                        best_shape = s;
                        best_color = col;
                    }
                }
            if (best_shape >= 0 && best >= tolerance)
                out.objects.push_back(
                    {{static_cast<ShapeKind>(best_shape), static_cast<ColorKind>(best_color), r, c}, best});
        }

    std::vector<std::array<double, 4>> lt(9);
    for (int lane = 0; lane < kGlyphLanes; ++lane) {
        std::string word;
        double conf = 1.0;
        for (int slot = 0; slot < kGlyphSlots; ++slot) {
            int best_letter = kNumLetters; // blank
            double best = -1.0;
            for (int l = 0; l <= kNumLetters; ++l) {
                for (int pr = 0; pr < 3; ++pr)
                    for (int pc = 0; pc < 3; ++pc) lt[static_cast<size_t>(pr * 3 + pc)] = {0, 0, 0, letter_px(l, pr, pc) ? 1.0 : 0.0};
                const double c = pattern_confidence(grid, lane * kCellPx, slot * 3, 3, 3, lt, 3, 4);
                if (c > best) {
                    best = c;
                    best_letter = l;
                }
            }
            if (best_letter == kNumLetters || best < tolerance) break;
            word.push_back(static_cast<char>('A' + best_letter));
            conf = std::min(conf, best);
        }
        if (!word.empty()) out.words.push_back({word, lane, conf});
    }
    return out;
}

// ---- tasks -------------------------------------------------------------------

enum class Scenario : int { Composition = 0, Reasoning = 1, TextRender = 2, Edit = 3, Reflection = 4 };
enum class Split : int { Train = 0, HeldOut = 1 };

inline const char* scenario_name(Scenario s) {
    static const char* names[] = {"composition", "reasoning", "text", "edit", "reflection"};
    return names[static_cast<int>(s)];
}
inline Scenario scenario_from_name(const std::string& n) {
    for (int i = 0; i < 5; ++i)
        if (n == scenario_name(static_cast<Scenario>(i))) return static_cast<Scenario>(i);
    throw ContractError("unknown scenario '" + n + "'");
}
inline const char* split_name(Split s) { return s == Split::Train ? "train" : "held-out"; }

struct CompositionPayload {
    int count = 1;
    ColorKind color = ColorKind::Red;
    ShapeKind shape = ShapeKind::Cube;
    std::optional<Region> region;
};

inline bool in_region(int r, int c, Region reg) {
    switch (reg) {
        case Region::Top: return r <= 1;
        case Region::Bottom: return r >= 2;
        case Region::Left: return c <= 1;
        case Region::Right: return c >= 2;
    }
    return false;
}

// Canonical placement: region cells in reading order with stride 2, so a
// caption maps to exactly one scene.
inline Scene canonical_scene(const CompositionPayload& p) {
    Scene s;
    std::vector<std::pair<int, int>> cells;
    for (int r = 0; r < kCells; ++r)
        for (int c = 0; c < kCells; ++c)
            if (!p.region || in_region(r, c, *p.region)) cells.emplace_back(r, c);
    for (int i = 0; i < p.count; ++i) {
        const auto [r, c] = cells[static_cast<size_t>(i * 2)];
        s.objects.push_back({p.shape, p.color, r, c});
    }
    return s;
}

inline std::vector<std::string> caption_words(const CompositionPayload& p) {
    std::vector<std::string> w = {count_name(p.count), color_name(p.color), shape_name(p.shape)};
    if (p.region) w.push_back(region_name(*p.region));
    return w;
}

inline std::vector<int> caption_tokens(const Vocab& v, const CompositionPayload& p) {
    return v.encode(caption_words(p));
}

// user-side synonym of a canonical caption word, or "" if it has none
inline const char* alias_word(const std::string& canonical) {
    static const std::pair<const char*, const char*> table[] = {
        {"one", "single"},  {"two", "pair"},     {"three", "trio"},  {"red", "scarlet"}, {"green", "jade"},
        {"blue", "navy"},   {"yellow", "amber"}, {"purple", "violet"}, {"cyan", "teal"}, {"cube", "box"},
        {"ball", "orb"},    {"tri", "wedge"},    {"top", "upper"},   {"bottom", "lower"}, {"left", "port"},
        {"right", "starboard"}};
    for (const auto& [canon, alias] : table)
        if (canonical == canon) return alias;
    return "";
}

// per-object description: color shape rR cC; glyph words as: text <letters>
inline std::vector<int> scene_description(const Vocab& v, const Scene& scene) {
    std::vector<int> out;
    for (const auto& o : scene.normalized().objects) {
        out.push_back(v.id(color_name(o.color)));
        out.push_back(v.id(shape_name(o.shape)));
        out.push_back(v.id("r" + std::to_string(o.r)));
        out.push_back(v.id("c" + std::to_string(o.c)));
    }
    if (!scene.glyph.empty()) {
        out.push_back(v.id("text"));
        for (char ch : scene.glyph) out.push_back(v.id(std::string(1, ch)));
    }
    return out;
}

// Fixed injective map from ambiguous key tokens to explicit composition
// payloads; the first `n_train` keys are the train split.
struct KnowledgeTable {
    int n_keys = 200;
    int n_train = 160;
    std::vector<int> perm; // key -> payload combo index

    static KnowledgeTable make(int n_keys = 200, int n_train = 160) {
        const int combos = 3 * kNumColors * kNumShapes * kNumRegions; // 216
        if (n_keys > combos) throw ContractError("knowledge table larger than payload space");
        KnowledgeTable t;
        t.n_keys = n_keys;
        t.n_train = n_train;
        std::vector<int> all(static_cast<size_t>(combos));
        for (int i = 0; i < combos; ++i) all[static_cast<size_t>(i)] = i;
        RngStream rng(0x7468696e6b67656eull, hash_str("knowledge-table"));
        for (int i = combos - 1; i > 0; --i) std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(rng.uniform_int(i + 1))]);
        t.perm.assign(all.begin(), all.begin() + n_keys);
        return t;
    }

    CompositionPayload expansion(int key) const {
        if (key < 0 || key >= n_keys) throw ContractError("knowledge key out of range");
        int x = perm[static_cast<size_t>(key)];
        CompositionPayload p;
        p.count = 1 + x % 3;
        x /= 3;
        p.color = static_cast<ColorKind>(x % kNumColors);
        x /= kNumColors;
        p.shape = static_cast<ShapeKind>(x % kNumShapes);
        x /= kNumShapes;
        p.region = static_cast<Region>(x % kNumRegions);
        return p;
    }

    bool is_train(int key) const { return key < n_train; }
    std::string key_token(int key) const {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "key%03d", key);
        return buf;
    }
};

enum class EditOp : int { Recolor = 0, Remove = 1, Add = 2 };

// One training/eval item; `content` is the user-side [C] in the planner
// prompt, `rewrite` the canonical instruction the generator was aligned to.
struct TaskRecord {
    Scenario scenario = Scenario::Composition;
    Split split = Split::Train;
    uint64_t seed = 0;
    uint64_t uid = 0;

    std::vector<int> content;
    std::vector<int> rewrite;
    std::vector<int> think_hint;

    Scene target_scene;
    std::optional<Scene> ref_scene;
    CompositionPayload comp;
    std::string word;
    std::vector<int> gt_response;
    int knowledge_key = -1;

    bool needs_image() const { return scenario != Scenario::Reflection; }
};

inline uint64_t task_uid(Scenario sc, Split sp, uint64_t seed) {
    return substream(hash_str("task"), static_cast<uint64_t>(sc), static_cast<uint64_t>(sp), seed);
}

namespace detail {

// content-order variants; index 0 is the canonical order
inline std::vector<int> permute_tokens(const std::vector<int>& toks, int variant) {
    if (variant == 0 || toks.size() < 2) return toks;
    std::vector<int> out = toks;
    const int n = static_cast<int>(toks.size());
    // rotate by variant, then swap the first pair on odd variants
    std::rotate(out.begin(), out.begin() + (variant % n == 0 ? 1 : variant % n), out.end());
    if (variant % 2 == 1 && n >= 2) std::swap(out[0], out[1]);
    return out;
}

inline CompositionPayload random_payload(RngStream& rng, bool with_region_half) {
    CompositionPayload p;
    p.count = 1 + rng.uniform_int(3);
    p.color = static_cast<ColorKind>(rng.uniform_int(kNumColors));
    p.shape = static_cast<ShapeKind>(rng.uniform_int(kNumShapes));
    if (with_region_half && rng.uniform() < 0.5) p.region = static_cast<Region>(rng.uniform_int(kNumRegions));
    return p;
}

inline Scene random_distinct_scene(RngStream& rng, int n_objects) {
    Scene s;
    std::vector<int> combo_pool;
    for (int i = 0; i < kNumColors * kNumShapes; ++i) combo_pool.push_back(i);
    for (int i = static_cast<int>(combo_pool.size()) - 1; i > 0; --i)
        std::swap(combo_pool[static_cast<size_t>(i)], combo_pool[static_cast<size_t>(rng.uniform_int(i + 1))]);
    std::vector<int> cell_pool;
    for (int i = 0; i < kCells * kCells; ++i) cell_pool.push_back(i);
    for (int i = static_cast<int>(cell_pool.size()) - 1; i > 0; --i)
        std::swap(cell_pool[static_cast<size_t>(i)], cell_pool[static_cast<size_t>(rng.uniform_int(i + 1))]);
    for (int i = 0; i < n_objects; ++i) {
        SceneObject o;
        o.color = static_cast<ColorKind>(combo_pool[static_cast<size_t>(i)] % kNumColors);
        o.shape = static_cast<ShapeKind>(combo_pool[static_cast<size_t>(i)] / kNumColors);
        o.r = cell_pool[static_cast<size_t>(i)] / kCells;
        o.c = cell_pool[static_cast<size_t>(i)] % kCells;
        s.objects.push_back(o);
    }
    return s;
}

} // namespace detail

// user phrasing: canonical words swapped for synonyms at the given rate, then
// reordered; only the planner's base knowledge maps it back
inline std::vector<int> user_phrasing(const Vocab& v, const CompositionPayload& p, RngStream& rng,
                                      double alias_rate = 0.5, bool scramble = true) {
    std::vector<int> toks;
    for (const std::string& w : caption_words(p)) {
        const char* alias = alias_word(w);
        toks.push_back(v.id(*alias && rng.uniform() < alias_rate ? alias : w.c_str()));
    }
    if (!scramble) return toks;
    return detail::permute_tokens(toks, rng.uniform_int(6));
}

// Deterministic task construction: identical (scenario, split, seed) yields
// an identical record. Reasoning tasks draw keys only from their split.
inline TaskRecord make_task(const Vocab& v, const KnowledgeTable& kt, Scenario scenario, Split split,
                            uint64_t seed) {
    TaskRecord task;
    task.scenario = scenario;
    task.split = split;
    task.seed = seed;
    task.uid = task_uid(scenario, split, seed);
    RngStream rng(task.uid, hash_str("make-task"));

    switch (scenario) {
        case Scenario::Composition: {
            task.comp = detail::random_payload(rng, true);
            task.target_scene = canonical_scene(task.comp);
            task.rewrite = caption_tokens(v, task.comp);
            task.content = user_phrasing(v, task.comp, rng);
            break;
        }
        case Scenario::Reasoning: {
            const int key = split == Split::Train ? rng.uniform_int(kt.n_train)
                                                  : kt.n_train + rng.uniform_int(kt.n_keys - kt.n_train);
            task.knowledge_key = key;
            task.comp = kt.expansion(key);
            task.target_scene = canonical_scene(task.comp);
            task.content = {v.id(kt.key_token(key))};
            task.rewrite = caption_tokens(v, task.comp);
            task.think_hint = {v.id(kt.key_token(key)), v.id("is")};
            for (int tok : task.rewrite) task.think_hint.push_back(tok);
            break;
        }
        case Scenario::TextRender: {
            const int len = 2 + rng.uniform_int(4);
            for (int i = 0; i < len; ++i) task.word.push_back(static_cast<char>('A' + rng.uniform_int(kNumLetters)));
            task.target_scene.glyph = task.word;
            task.target_scene.glyph_lane = 0;
            task.content.push_back(v.id("text"));
            for (char ch : task.word) task.content.push_back(v.id(std::string(1, ch)));
            task.rewrite = task.content;
            break;
        }
        case Scenario::Edit: {
            Scene src = detail::random_distinct_scene(rng, 1 + rng.uniform_int(3));
            const EditOp op = static_cast<EditOp>(rng.uniform_int(3));
            Scene dst = src;
            std::vector<int> instr;
            if (op == EditOp::Recolor) {
                const int j = rng.uniform_int(static_cast<int>(src.objects.size()));
                ColorKind nc;
                do {
                    nc = static_cast<ColorKind>(rng.uniform_int(kNumColors));
                } while (nc == src.objects[static_cast<size_t>(j)].color);
                instr = v.encode({"recolor", color_name(src.objects[static_cast<size_t>(j)].color),
                                  shape_name(src.objects[static_cast<size_t>(j)].shape), "to", color_name(nc)});
                dst.objects[static_cast<size_t>(j)].color = nc;
            } else if (op == EditOp::Remove && src.objects.size() > 1) {
                const int j = rng.uniform_int(static_cast<int>(src.objects.size()));
                instr = v.encode({"remove", color_name(src.objects[static_cast<size_t>(j)].color),
                                  shape_name(src.objects[static_cast<size_t>(j)].shape)});
                dst.objects.erase(dst.objects.begin() + j);
            } else {
                // add into a free cell with an unused (color, shape) combo
                SceneObject o;
                std::vector<std::pair<int, int>> free_cells;
                for (int r = 0; r < kCells; ++r)
                    for (int c = 0; c < kCells; ++c) {
                        bool used = false;
                        for (const auto& ob : src.objects) used = used || (ob.r == r && ob.c == c);
                        if (!used) free_cells.emplace_back(r, c);
                    }
                const auto [r, c] = free_cells[static_cast<size_t>(rng.uniform_int(static_cast<int>(free_cells.size())))];
                bool fresh = false;
                while (!fresh) {
                    o.color = static_cast<ColorKind>(rng.uniform_int(kNumColors));
                    o.shape = static_cast<ShapeKind>(rng.uniform_int(kNumShapes));
                    fresh = true;
                    for (const auto& ob : src.objects) fresh = fresh && !(ob.color == o.color && ob.shape == o.shape);
                }
                o.r = r;
                o.c = c;
                instr = v.encode({"add", color_name(o.color), shape_name(o.shape), "at", "r" + std::to_string(r),
                                  "c" + std::to_string(c)});
                dst.objects.push_back(o);
            }
            task.ref_scene = src;
            task.target_scene = dst;
            task.content.push_back(v.img);
            for (int tok : scene_description(v, src)) task.content.push_back(tok);
            for (int tok : instr) task.content.push_back(tok);
            task.rewrite = instr;
            break;
        }
        case Scenario::Reflection: {
            CompositionPayload p = detail::random_payload(rng, true);
            p.count = 1; // single object keeps corrective references unambiguous
            Scene caption_scene = canonical_scene(p);
            const bool faithful = rng.uniform() < 0.5;
            Scene shown = caption_scene;
            std::vector<int> response;
            if (faithful) {
                response = v.encode({"the", "generated", "image", "is", "well", "aligned", "with", "the", "caption"});
            } else {
                SceneObject& o = shown.objects[0];
                const int flip = rng.uniform_int(3);
                if (flip == 0) {
                    const ColorKind truec = o.color;
                    do {
                        o.color = static_cast<ColorKind>(rng.uniform_int(kNumColors));
                    } while (o.color == truec);
                    response = v.encode({"recolor", color_name(o.color), shape_name(o.shape), "to", color_name(truec)});
                } else if (flip == 1) {
                    const ShapeKind trues = o.shape;
                    do {
                        o.shape = static_cast<ShapeKind>(rng.uniform_int(kNumShapes));
                    } while (o.shape == trues);
                    response = v.encode({"reshape", color_name(o.color), shape_name(o.shape), "to", shape_name(trues)});
                } else {
                    const int tr = o.r, tc = o.c;
                    do {
                        o.r = rng.uniform_int(kCells);
                        o.c = rng.uniform_int(kCells);
                    } while (o.r == tr && o.c == tc);
                    response = v.encode({"move", color_name(o.color), shape_name(o.shape), "to",
                                         "r" + std::to_string(tr), "c" + std::to_string(tc)});
                }
            }
            task.comp = p;
            task.target_scene = caption_scene;
            task.ref_scene = shown;
            task.gt_response = response;
            task.content = caption_tokens(v, p);
            task.content.push_back(v.img);
            for (int tok : scene_description(v, shown)) task.content.push_back(tok);
            task.rewrite = response;
            break;
        }
    }
    if (task.content.empty()) throw GenerationError("task has empty content");
    return task;
}

struct ScenarioMixture {
    // proportional to the five dataset sizes
    std::array<double, 5> weights = {5, 10, 3, 3, 3};

    Scenario sample(RngStream& rng) const {
        const int i = rng.weighted_choice(5, [&](int j) { return weights[static_cast<size_t>(j)]; });
        return static_cast<Scenario>(i);
    }
};

} // namespace thinkgen
