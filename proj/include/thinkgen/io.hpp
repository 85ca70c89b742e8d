#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "thinkgen/bridge.hpp"
#include "thinkgen/generator.hpp"
#include "thinkgen/grpo.hpp"
#include "thinkgen/planner.hpp"
#include "thinkgen/world.hpp"

namespace thinkgen {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---- metrics JSONL ----------------------------------------------------------

inline json to_json(const StepMetrics& m) {
    return json{{"step", m.step},       {"stage", m.stage},         {"scenario", m.scenario},
                {"mean_reward", m.mean_reward}, {"mean_cot_len", m.mean_cot_len}, {"clip_frac", m.clip_frac},
                {"kl", m.kl},           {"loss", m.loss},           {"skipped_groups", m.skipped_groups}};
}

inline StepMetrics step_metrics_from_json(const json& j) {
    StepMetrics m;
    m.step = j.at("step").get<int64_t>();
    m.stage = j.at("stage").get<std::string>();
    m.scenario = j.value("scenario", "");
    m.mean_reward = j.at("mean_reward").get<double>();
    m.mean_cot_len = j.value("mean_cot_len", 0.0);
    m.clip_frac = j.value("clip_frac", 0.0);
    m.kl = j.value("kl", 0.0);
    m.loss = j.value("loss", 0.0);
    m.skipped_groups = j.value("skipped_groups", 0);
    return m;
}

// One JSON object per line; the file is truncated on open so reruns are
// byte-reproducible.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path) : os_(path, std::ios::trunc) {
        if (!os_) throw IoError("cannot open metrics file " + path);
    }
    void write(const json& j) { os_ << j.dump() << "\n"; }
    void flush() { os_.flush(); }

private:
    std::ofstream os_;
};

inline std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::vector<json> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(json::parse(line));
    }
    return out;
}

// ---- checkpoints --------------------------------------------------------------
// A checkpoint is a directory of named TGAR blobs plus a JSON manifest.

inline std::string blob_filename(const std::string& param_name) {
    std::string s = param_name;
    for (char& c : s)
        if (c == '/' || c == '\\') c = '_';
    return s + ".tgar";
}

inline void save_store(const fs::path& dir, const ParamStore& ps, json manifest_extra = {}) {
    fs::create_directories(dir);
    json manifest;
    manifest["params"] = json::array();
    for (const auto& [name, arr] : ps.params) {
        save_array((dir / blob_filename(name)).string(), arr);
        json p;
        p["name"] = name;
        p["shape"] = arr.shape;
        p["hash"] = array_hash(arr);
        manifest["params"].push_back(p);
    }
    if (!manifest_extra.is_null()) manifest["meta"] = std::move(manifest_extra);
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    os << manifest.dump(2) << "\n";
    if (!os) throw IoError("cannot write manifest in " + dir.string());
}

inline json load_manifest(const fs::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw IoError("no manifest in " + dir.string());
    json j;
    is >> j;
    return j;
}

inline ParamStore load_store(const fs::path& dir) {
    json manifest = load_manifest(dir);
    ParamStore ps;
    for (const auto& p : manifest.at("params")) {
        const std::string name = p.at("name").get<std::string>();
        Array arr = load_array((dir / blob_filename(name)).string());
        if (p.contains("hash") && p.at("hash").get<uint64_t>() != array_hash(arr))
            throw IoError("checkpoint blob hash mismatch for " + name);
        ps.insert(name, std::move(arr));
    }
    return ps;
}

inline void save_planner(const fs::path& dir, const PlannerPolicy& p, const Vocab& vocab) {
    json meta;
    meta["kind"] = "planner";
    meta["d"] = p.cfg.d;
    meta["layers"] = p.cfg.layers;
    meta["heads"] = p.cfg.heads;
    meta["context"] = p.cfg.context;
    meta["vocab_size"] = p.cfg.vocab_size;
    meta["vocab_hash"] = vocab.hash();
    meta["version"] = p.version;
    save_store(dir, p.params, meta);
}

inline PlannerPolicy load_planner(const fs::path& dir, const Vocab& vocab) {
    json meta = load_manifest(dir).at("meta");
    if (meta.at("kind") != "planner") throw IoError("checkpoint at " + dir.string() + " is not a planner");
    if (meta.at("vocab_hash").get<uint64_t>() != vocab.hash())
        throw IoError("planner checkpoint was built against a different vocabulary");
    PlannerPolicy p;
    p.cfg.d = meta.at("d").get<int64_t>();
    p.cfg.layers = meta.at("layers").get<int>();
    p.cfg.heads = meta.at("heads").get<int>();
    p.cfg.context = meta.at("context").get<int64_t>();
    p.cfg.vocab_size = meta.at("vocab_size").get<int>();
    p.version = meta.at("version").get<int>();
    p.params = load_store(dir);
    return p;
}

inline void save_generator(const fs::path& dir, const FlowGenerator& g) {
    json meta;
    meta["kind"] = "generator";
    meta["d"] = g.cfg.d;
    meta["blocks"] = g.cfg.blocks;
    meta["heads"] = g.cfg.heads;
    meta["patch"] = g.cfg.patch;
    meta["time_freqs"] = g.cfg.time_freqs;
    meta["resolution_tag"] = g.cfg.resolution_tag;
    save_store(dir, g.params, meta);
}

inline FlowGenerator load_generator(const fs::path& dir) {
    json meta = load_manifest(dir).at("meta");
    if (meta.at("kind") != "generator") throw IoError("checkpoint at " + dir.string() + " is not a generator");
    FlowGenerator g;
    g.cfg.d = meta.at("d").get<int64_t>();
    g.cfg.blocks = meta.at("blocks").get<int>();
    g.cfg.heads = meta.at("heads").get<int>();
    g.cfg.patch = meta.at("patch").get<int>();
    g.cfg.time_freqs = meta.at("time_freqs").get<int>();
    g.cfg.resolution_tag = meta.at("resolution_tag").get<std::string>();
    g.params = load_store(dir);
    return g;
}

inline void save_bridge(const fs::path& dir, const Bridge& b) {
    json meta;
    meta["kind"] = "bridge";
    meta["K"] = b.cfg.K;
    meta["planner_d"] = b.cfg.planner_d;
    meta["gen_d"] = b.cfg.gen_d;
    meta["connector"] = connector_name(b.cfg.connector);
    meta["truncate"] = b.cfg.truncate;
    save_store(dir, b.params, meta);
}

inline Bridge load_bridge(const fs::path& dir) {
    json meta = load_manifest(dir).at("meta");
    if (meta.at("kind") != "bridge") throw IoError("checkpoint at " + dir.string() + " is not a bridge");
    Bridge b;
    b.cfg.K = meta.at("K").get<int>();
    b.cfg.planner_d = meta.at("planner_d").get<int64_t>();
    b.cfg.gen_d = meta.at("gen_d").get<int64_t>();
    b.cfg.connector = connector_from_name(meta.at("connector").get<std::string>());
    b.cfg.truncate = meta.at("truncate").get<bool>();
    b.params = load_store(dir);
    return b;
}

// Condition packs serialize for debugging: blob plus JSON provenance.
inline void save_condition(const fs::path& dir, const ConditionPack& pack) {
    fs::create_directories(dir);
    save_array((dir / "refined.tgar").string(), pack.refined);
    json j;
    j["K"] = pack.K;
    j["m"] = pack.m;
    j["policy_version"] = pack.policy_version;
    j["prompt_hash"] = pack.prompt_hash;
    std::ofstream os(dir / "provenance.json", std::ios::trunc);
    os << j.dump(2) << "\n";
}

// ---- scenes and tasks ----------------------------------------------------------

inline json to_json(const Scene& s) {
    json objs = json::array();
    for (const auto& o : s.objects)
        objs.push_back(json{{"shape", shape_name(o.shape)},
                            {"color", color_name(o.color)},
                            {"r", o.r},
                            {"c", o.c}});
    json j;
    j["objects"] = std::move(objs);
    if (!s.glyph.empty()) {
        j["glyph"] = s.glyph;
        j["glyph_lane"] = s.glyph_lane;
    }
    return j;
}

inline Scene scene_from_json(const json& j) {
    Scene s;
    for (const auto& o : j.at("objects")) {
        SceneObject obj;
        const std::string sh = o.at("shape").get<std::string>();
        const std::string co = o.at("color").get<std::string>();
        for (int i = 0; i < kNumShapes; ++i)
            if (sh == shape_name(static_cast<ShapeKind>(i))) obj.shape = static_cast<ShapeKind>(i);
        for (int i = 0; i < kNumColors; ++i)
            if (co == color_name(static_cast<ColorKind>(i))) obj.color = static_cast<ColorKind>(i);
        obj.r = o.at("r").get<int>();
        obj.c = o.at("c").get<int>();
        s.objects.push_back(obj);
    }
    if (j.contains("glyph")) {
        s.glyph = j.at("glyph").get<std::string>();
        s.glyph_lane = j.value("glyph_lane", 0);
    }
    return s;
}

inline json payload_to_json(const CompositionPayload& p) {
    json j;
    j["count"] = p.count;
    j["color"] = color_name(p.color);
    j["shape"] = shape_name(p.shape);
    if (p.region) j["region"] = region_name(*p.region);
    return j;
}

inline json to_json(const TaskRecord& task, const Vocab& v) {
    json j;
    j["scenario"] = scenario_name(task.scenario);
    j["split"] = split_name(task.split);
    j["seed"] = task.seed;
    j["uid"] = task.uid;
    j["content"] = v.decode(task.content);
    j["rewrite"] = v.decode(task.rewrite);
    if (!task.think_hint.empty()) j["think_hint"] = v.decode(task.think_hint);
    j["payload"] = payload_to_json(task.comp);
    j["target_scene"] = to_json(task.target_scene);
    if (task.ref_scene) j["ref_scene"] = to_json(*task.ref_scene);
    if (!task.word.empty()) j["word"] = task.word;
    if (!task.gt_response.empty()) j["gt_response"] = v.decode(task.gt_response);
    if (task.knowledge_key >= 0) j["knowledge_key"] = task.knowledge_key;
    return j;
}

inline std::vector<int> encode_sentence(const Vocab& v, const std::string& text) {
    std::vector<int> out;
    std::string word;
    for (char c : text) {
        if (c == ' ') {
            if (!word.empty()) out.push_back(v.id(word));
            word.clear();
        } else {
            word.push_back(c);
        }
    }
    if (!word.empty()) out.push_back(v.id(word));
    return out;
}

inline TaskRecord task_from_json(const json& j, const Vocab& v) {
    TaskRecord t;
    t.scenario = scenario_from_name(j.at("scenario").get<std::string>());
    t.split = j.at("split").get<std::string>() == "train" ? Split::Train : Split::HeldOut;
    t.seed = j.at("seed").get<uint64_t>();
    t.uid = j.at("uid").get<uint64_t>();
    t.content = encode_sentence(v, j.at("content").get<std::string>());
    t.rewrite = encode_sentence(v, j.at("rewrite").get<std::string>());
    if (j.contains("think_hint")) t.think_hint = encode_sentence(v, j.at("think_hint").get<std::string>());
    const json& p = j.at("payload");
    t.comp.count = p.at("count").get<int>();
    for (int i = 0; i < kNumColors; ++i)
        if (p.at("color") == color_name(static_cast<ColorKind>(i))) t.comp.color = static_cast<ColorKind>(i);
    for (int i = 0; i < kNumShapes; ++i)
        if (p.at("shape") == shape_name(static_cast<ShapeKind>(i))) t.comp.shape = static_cast<ShapeKind>(i);
    if (p.contains("region"))
        for (int i = 0; i < kNumRegions; ++i)
            if (p.at("region") == region_name(static_cast<Region>(i))) t.comp.region = static_cast<Region>(i);
    t.target_scene = scene_from_json(j.at("target_scene"));
    if (j.contains("ref_scene")) t.ref_scene = scene_from_json(j.at("ref_scene"));
    if (j.contains("word")) t.word = j.at("word").get<std::string>();
    if (j.contains("gt_response")) t.gt_response = encode_sentence(v, j.at("gt_response").get<std::string>());
    t.knowledge_key = j.value("knowledge_key", -1);
    return t;
}

inline json to_json(const RewardRecord& r) {
    json j;
    j["scenario"] = r.scenario;
    j["score"] = r.score;
    j["sub"] = r.sub;
    j["malformed"] = r.malformed;
    if (r.degenerate) j["degenerate"] = true;
    j["version"] = r.version;
    return j;
}

} // namespace thinkgen
