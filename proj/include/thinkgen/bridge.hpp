#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "thinkgen/nn.hpp"
#include "thinkgen/planner.hpp"
#include "thinkgen/vocab.hpp"

namespace thinkgen {

enum class PromptMode { PretrainPseudoCot, RlColdStart };

// Prompt layouts:
//   pretrain: [SYS] + [C] + <think> + </think> + [C]   (empty think body)
//   rl:       [SYS] + [C] + <think>
inline TokenSeq build_prompt(const Vocab& v, PromptMode mode, const std::vector<int>& content) {
    if (content.empty()) throw ContractError("build_prompt: empty content");
    TokenSeq seq;
    seq.ids.push_back(v.sys);
    for (int tok : content) seq.ids.push_back(tok);
    seq.ids.push_back(v.think_open);
    if (mode == PromptMode::PretrainPseudoCot) {
        seq.ids.push_back(v.think_close);
        for (int tok : content) seq.ids.push_back(tok);
    }
    seq.prompt_len = seq.length();
    seq.locate_think_markers(v);
    return seq;
}

enum class ConnectorKind { Linear, Mlp, Xformer };

inline const char* connector_name(ConnectorKind k) {
    static const char* names[] = {"linear", "mlp", "xformer"};
    return names[static_cast<int>(k)];
}
inline ConnectorKind connector_from_name(const std::string& n) {
    for (int i = 0; i < 3; ++i)
        if (n == connector_name(static_cast<ConnectorKind>(i))) return static_cast<ConnectorKind>(i);
    throw ContractError("unknown connector kind '" + n + "'");
}

struct BridgeConfig {
    int K = 25;            // prepadding rows
    int64_t planner_d = 64; // planner width; refined rows are 2*planner_d wide
    int64_t gen_d = 64;     // generator condition width
    ConnectorKind connector = ConnectorKind::Linear;
    bool truncate = true;   // true: rows strictly after </think>; false: all rows

    int64_t concat_width() const { return 2 * planner_d; }
};

// Prepadding states plus the connector; both live in one store so stages can
// freeze them by name.
struct Bridge {
    BridgeConfig cfg;
    ParamStore params;
};

inline Bridge init_bridge(const BridgeConfig& cfg, uint64_t seed) {
    Bridge b;
    b.cfg = cfg;
    RngStream rng(seed, hash_str("bridge-init"));
    b.params.insert("prepadding", Array::randn({cfg.K, cfg.concat_width()}, rng, real(0.02)));
    // variance-preserving projection so condition rows start at unit scale
    const real proj_std = static_cast<real>(1.0 / std::sqrt(static_cast<double>(cfg.concat_width())));
    switch (cfg.connector) {
        case ConnectorKind::Linear:
            init_linear(b.params, "connector", cfg.concat_width(), cfg.gen_d, rng, proj_std);
            break;
        case ConnectorKind::Mlp:
            init_linear(b.params, "connector.fc1", cfg.concat_width(), cfg.concat_width(), rng, proj_std);
            init_linear(b.params, "connector", cfg.concat_width(), cfg.gen_d, rng, proj_std);
            break;
        case ConnectorKind::Xformer:
            init_block(b.params, "connector.blk", cfg.concat_width(), rng);
            init_linear(b.params, "connector", cfg.concat_width(), cfg.gen_d, rng, proj_std);
            break;
    }
    return b;
}

// Square connector that passes states through unchanged (test builds).
inline Bridge identity_bridge(BridgeConfig cfg, uint64_t seed) {
    if (cfg.gen_d != cfg.concat_width()) throw ContractError("identity connector needs gen_d == 2*planner_d");
    cfg.connector = ConnectorKind::Linear;
    Bridge b = init_bridge(cfg, seed);
    Array& w = b.params.at("connector.w");
    for (int64_t i = 0; i < w.shape[0]; ++i)
        for (int64_t j = 0; j < w.shape[1]; ++j) w.at(i, j) = i == j ? real(1) : real(0);
    return b;
}

// Pre-connector refined states: positions strictly after </think> (or all
// positions when truncation is off), final two layers feature-concatenated,
// with the K prepadding rows prepended. Hidden states enter as constants;
// prepadding is read from the bound store so it can train.
inline NodeId refined_states_t(Tape& t, const Bound& bridge_bound, const BridgeConfig& cfg,
                               const std::vector<Array>& hiddens, const TokenSeq& seq) {
    if (hiddens.size() < 2) throw ContractError("refined_states: planner must expose at least two layers");
    const Array& top = hiddens[hiddens.size() - 1];
    const Array& below = hiddens[hiddens.size() - 2];
    if (top.shape != below.shape || top.shape[1] != cfg.planner_d)
        throw ShapeError("refined_states: hidden width " + shape_str(top.shape));
    if (top.shape[0] != seq.length()) throw ContractError("refined_states: hiddens do not cover the sequence");

    int64_t first = 0;
    if (cfg.truncate) {
        if (seq.think_close < 0)
            throw ContractError("refined_states: sequence has no </think> (malformed rollout)");
        first = seq.think_close + 1;
    }
    const int64_t n = seq.length();
    const int64_t m = n - first;
    NodeId pads = bridge_bound.at("prepadding");
    if (m == 0) return pads;
    Array inst = Array::zeros({m, cfg.concat_width()});
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < cfg.planner_d; ++j) {
            inst.at(i, j) = below.at(first + i, j);
            inst.at(i, cfg.planner_d + j) = top.at(first + i, j);
        }
    }
    return t.concat_rows({pads, t.constant(std::move(inst))});
}

// Row-wise projection into the generator's condition width.
inline NodeId connect_t(Tape& t, const Bound& bridge_bound, const BridgeConfig& cfg, NodeId pre_states) {
    if (t.val(pre_states).cols() != cfg.concat_width())
        throw ShapeError("connect: width " + shape_str(t.val(pre_states).shape) + " does not match connector input");
    NodeId x = pre_states;
    switch (cfg.connector) {
        case ConnectorKind::Linear:
            break;
        case ConnectorKind::Mlp:
            x = t.gelu(linear(t, bridge_bound, "connector.fc1", x));
            break;
        case ConnectorKind::Xformer:
            x = transformer_block(t, bridge_bound, "connector.blk", x, /*heads=*/4, /*causal=*/false);
            break;
    }
    return linear(t, bridge_bound, "connector", x);
}

// Refined instruction states after VGI-refine, ready as generator conditioning.
struct ConditionPack {
    Array refined; // (K + m, gen_d)
    int K = 0;
    int m = 0;
    int policy_version = 0;
    uint64_t prompt_hash = 0;

    int64_t rows() const { return refined.rows(); }
};

// Non-differentiable convenience path used by rollouts and evaluation.
inline ConditionPack make_condition(const PlannerPolicy& planner, const Bridge& bridge, const TokenSeq& seq) {
    PlanForward fwd = plan_forward(planner, seq.ids);
    Tape t(false);
    Bound bb = bind_params(t, bridge.params);
    NodeId pre = refined_states_t(t, bb, bridge.cfg, fwd.hiddens, seq);
    NodeId packed = connect_t(t, bb, bridge.cfg, pre);
    ConditionPack pack;
    pack.refined = t.val(packed);
    pack.K = bridge.cfg.K;
    pack.m = static_cast<int>(pack.refined.rows()) - bridge.cfg.K;
    pack.policy_version = planner.version;
    pack.prompt_hash = seq.ids_hash();
    return pack;
}

} // namespace thinkgen
