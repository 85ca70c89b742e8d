#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "thinkgen/vocab.hpp"
#include "thinkgen/world.hpp"

namespace thinkgen {

constexpr const char* kRewardRulesVersion = "rules-v1";

struct RewardRecord {
    std::string scenario;
    double score = 0.0; // in [0,1]
    std::map<std::string, double> sub;
    bool malformed = false;
    bool degenerate = false;
    std::string version = kRewardRulesVersion;
};

// ---- edit distance -----------------------------------------------------------

template <typename T>
int levenshtein(const std::vector<T>& a, const std::vector<T>& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (size_t j = 1; j <= m; ++j) {
            const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

// Levenshtein distance over the longer length; 0 when both are empty.
template <typename T>
double ned(const std::vector<T>& a, const std::vector<T>& b) {
    const size_t longest = std::max(a.size(), b.size());
    if (longest == 0) return 0.0;
    return static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

// ---- rule models ---------------------------------------------------------------

// Binary sub-checks against the payload; score is the passed fraction, or
// all-or-nothing in strict mode.
inline RewardRecord reward_composition(const Array& grid, const CompositionPayload& payload, bool strict = false,
                                       double tolerance = 0.5) {
    RewardRecord rec;
    rec.scenario = "composition";
    ParsedScene parsed = parse_scene(grid, tolerance);
    const bool any = !parsed.objects.empty();
    bool count_ok = static_cast<int>(parsed.objects.size()) == payload.count;
    bool color_ok = any, shape_ok = any, region_ok = any;
    for (const auto& po : parsed.objects) {
        color_ok = color_ok && po.obj.color == payload.color;
        shape_ok = shape_ok && po.obj.shape == payload.shape;
        if (payload.region) region_ok = region_ok && in_region(po.obj.r, po.obj.c, *payload.region);
    }
    rec.sub["count"] = count_ok ? 1 : 0;
    rec.sub["color"] = color_ok ? 1 : 0;
    rec.sub["shape"] = shape_ok ? 1 : 0;
    double checks = 3, passed = rec.sub["count"] + rec.sub["color"] + rec.sub["shape"];
    if (payload.region) {
        rec.sub["position"] = region_ok ? 1 : 0;
        checks += 1;
        passed += rec.sub["position"];
    }
    rec.score = strict ? (passed == checks ? 1.0 : 0.0) : passed / checks;
    return rec;
}

// Word accuracy over glyph-decoded lanes, with the NED of the letter
// concatenations as a sub-score.
inline RewardRecord reward_text(const Array& grid, const std::vector<std::string>& words, double tolerance = 0.5) {
    if (words.empty()) throw ContractError("reward_text: empty word list");
    RewardRecord rec;
    rec.scenario = "text";
    ParsedScene parsed = parse_scene(grid, tolerance);
    std::vector<std::string> decoded;
    for (const auto& w : parsed.words) decoded.push_back(w.word);

    int matched = 0;
    std::vector<bool> used(decoded.size(), false);
    for (const auto& want : words)
        for (size_t i = 0; i < decoded.size(); ++i)
            if (!used[i] && decoded[i] == want) {
                used[i] = true;
                ++matched;
                break;
            }
    rec.score = static_cast<double>(matched) / static_cast<double>(words.size());

    std::vector<char> got_cat, want_cat;
    for (const auto& w : decoded) got_cat.insert(got_cat.end(), w.begin(), w.end());
    for (const auto& w : words) want_cat.insert(want_cat.end(), w.begin(), w.end());
    const double d = ned(got_cat, want_cat);
    rec.sub["word_acc"] = rec.score;
    rec.sub["ned"] = d;
    rec.sub["ned_similarity"] = 1.0 - d;
    return rec;
}

// Cosine similarity between flattened grids, mapped from [-1,1] to [0,1].
inline RewardRecord reward_edit(const Array& grid, const Array& target) {
    if (grid.shape != target.shape)
        throw ShapeError("reward_edit: " + shape_str(grid.shape) + " vs " + shape_str(target.shape));
    RewardRecord rec;
    rec.scenario = "edit";
    double dot = 0, na = 0, nb = 0;
    for (int64_t i = 0; i < grid.numel(); ++i) {
        dot += static_cast<double>(grid[i]) * target[i];
        na += static_cast<double>(grid[i]) * grid[i];
        nb += static_cast<double>(target[i]) * target[i];
    }
    if (na == 0.0 || nb == 0.0) {
        rec.score = 0.0;
        rec.degenerate = true;
        rec.sub["cosine"] = 0.0;
        return rec;
    }
    const double cosine = dot / (std::sqrt(na) * std::sqrt(nb));
    rec.sub["cosine"] = cosine;
    rec.score = std::clamp((cosine + 1.0) / 2.0, 0.0, 1.0);
    return rec;
}

// The image must realize the resolved knowledge: composition checks against
// the expanded payload.
inline RewardRecord reward_reasoning(const Array& grid, const CompositionPayload& expanded, bool strict = false,
                                     double tolerance = 0.5) {
    RewardRecord rec = reward_composition(grid, expanded, strict, tolerance);
    rec.scenario = "reasoning";
    return rec;
}

// 1 - NED between the response and the ground truth; no generator call.
inline RewardRecord reward_reflection(const std::vector<int>& response, const std::vector<int>& gt_response) {
    RewardRecord rec;
    rec.scenario = "reflection";
    const double d = ned(response, gt_response);
    rec.score = 1.0 - d;
    rec.sub["ned"] = d;
    if (response.empty() && gt_response.empty()) {
        rec.score = 1.0;
        rec.degenerate = true;
    }
    return rec;
}

// ---- router --------------------------------------------------------------------

struct RolloutArtifacts {
    const Array* grid = nullptr;      // generated grid latent (image scenarios)
    const TokenSeq* rollout = nullptr; // planner-side rollout (reflection)
    const Vocab* vocab = nullptr;
    bool malformed = false;
};

// Dispatches a rollout to its scenario's rule model; reflection never touches
// the generator. Malformed rollouts score the scenario minimum.
inline RewardRecord route_reward(const TaskRecord& task, const RolloutArtifacts& art, bool strict = false) {
    RewardRecord rec;
    rec.scenario = scenario_name(task.scenario);
    if (art.malformed) {
        rec.malformed = true;
        rec.score = 0.0;
        return rec;
    }
    switch (task.scenario) {
        case Scenario::Composition:
            if (!art.grid) throw ContractError("route_reward: composition needs a grid");
            rec = reward_composition(*art.grid, task.comp, strict);
            break;
        case Scenario::Reasoning:
            if (!art.grid) throw ContractError("route_reward: reasoning needs a grid");
            rec = reward_reasoning(*art.grid, task.comp, strict);
            break;
        case Scenario::TextRender:
            if (!art.grid) throw ContractError("route_reward: text rendering needs a grid");
            rec = reward_text(*art.grid, {task.word});
            break;
        case Scenario::Edit:
            if (!art.grid) throw ContractError("route_reward: edit needs a grid");
            rec = reward_edit(*art.grid, render(task.target_scene));
            break;
        case Scenario::Reflection: {
            if (!art.rollout || !art.vocab) throw ContractError("route_reward: reflection needs the rollout");
            // response = tokens after </think>, minus the trailing <eos>
            std::vector<int> response = art.rollout->post_think_tokens();
            if (!response.empty() && response.back() == art.vocab->eos) response.pop_back();
            rec = reward_reflection(response, task.gt_response);
            break;
        }
    }
    rec.scenario = scenario_name(task.scenario);
    rec.version = kRewardRulesVersion;
    return rec;
}

} // namespace thinkgen
