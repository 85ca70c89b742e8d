#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "thinkgen/nn.hpp"
#include "thinkgen/rng.hpp"
#include "thinkgen/tape.hpp"
#include "thinkgen/vocab.hpp"

namespace thinkgen {

struct PlannerConfig {
    int64_t d = 64;
    int layers = 4;
    int heads = 4;
    int64_t context = 128;
    int vocab_size = 0;

    void validate() const {
        if (layers < 2) throw ContractError("planner needs at least 2 layers (the bridge reads the final two)");
        if (d % heads != 0) throw ContractError("planner width must divide heads");
        if (vocab_size < 1) throw ContractError("planner vocab_size unset");
    }
};

// Toy autoregressive decoder. Parameters live in a ParamStore so training
// stages can freeze/unfreeze by name and hash them.
struct PlannerPolicy {
    PlannerConfig cfg;
    ParamStore params;
    int version = 0;
};

inline PlannerPolicy init_planner(const PlannerConfig& cfg, uint64_t seed) {
    cfg.validate();
    PlannerPolicy p;
    p.cfg = cfg;
    RngStream rng(seed, hash_str("planner-init"));
    p.params.insert("wte", Array::randn({cfg.vocab_size, cfg.d}, rng, real(0.02)));
    p.params.insert("wpe", Array::randn({cfg.context, cfg.d}, rng, real(0.02)));
    for (int l = 0; l < cfg.layers; ++l) init_block(p.params, "blk" + std::to_string(l), cfg.d, rng);
    p.params.insert("lnf.g", Array::full({1, cfg.d}, real(1)));
    p.params.insert("lnf.b", Array::zeros({1, cfg.d}));
    // zero head: an untrained policy is exactly uniform
    p.params.insert("head", Array::zeros({cfg.d, cfg.vocab_size}));
    return p;
}

struct PlanForwardNodes {
    NodeId logits = -1;                // (n, vocab)
    std::vector<NodeId> hiddens;       // layers entries of (n, d): residual stream after each block
};

inline PlanForwardNodes planner_forward_t(Tape& t, const Bound& b, const PlannerConfig& cfg,
                                          const std::vector<int>& ids) {
    if (ids.empty()) throw ContractError("planner forward: empty sequence");
    if (static_cast<int64_t>(ids.size()) > cfg.context)
        throw ContractError("planner forward: sequence longer than context");
    for (int tid : ids)
        if (tid < 0 || tid >= cfg.vocab_size) throw VocabError("planner forward: id " + std::to_string(tid));

    const int64_t n = static_cast<int64_t>(ids.size());
    std::vector<int> pos(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) pos[i] = static_cast<int>(i);

    NodeId x = t.add(t.gather_rows(b.at("wte"), ids), t.gather_rows(b.at("wpe"), pos));
    PlanForwardNodes out;
    out.hiddens.reserve(static_cast<size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l) {
        x = transformer_block(t, b, "blk" + std::to_string(l), x, cfg.heads, /*causal=*/true);
        out.hiddens.push_back(x);
    }
    NodeId h = t.layer_norm(x, b.at("lnf.g"), b.at("lnf.b"));
    out.logits = t.matmul(h, b.at("head"));
    (void)n;
    return out;
}

struct PlanForward {
    Array logits;               // (n, vocab)
    std::vector<Array> hiddens; // layers entries of (n, d)
};

// Plain (no-gradient) forward; exposes per-layer, per-position hidden states.
inline PlanForward plan_forward(const PlannerPolicy& policy, const std::vector<int>& ids) {
    Tape t(false);
    Bound b = bind_params(t, policy.params);
    PlanForwardNodes nodes = planner_forward_t(t, b, policy.cfg, ids);
    PlanForward out;
    out.logits = t.val(nodes.logits);
    out.hiddens.reserve(nodes.hiddens.size());
    for (NodeId h : nodes.hiddens) out.hiddens.push_back(t.val(h));
    return out;
}

inline PlanForward plan_forward(const PlannerPolicy& policy, const TokenSeq& seq) {
    return plan_forward(policy, seq.ids);
}

namespace detail {

inline void softmax_temp(std::vector<double>& logits, double temperature) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double s = 0;
    for (double& v : logits) {
        v = std::exp((v - mx) / temperature);
        s += v;
    }
    for (double& v : logits) v /= s;
}

} // namespace detail

// Samples a continuation of `prompt`. temperature <= 0 means greedy argmax
// decoding (the temperature -> 0 limit); its recorded log-probs are 0.
// Stops at <eos> or after max_new tokens. If the prompt opens a <think> block
// that is never closed, the rollout is kept and flagged malformed; the reward
// router scores it at the scenario minimum.
inline TokenSeq sample_rollout(const PlannerPolicy& policy, const TokenSeq& prompt, double temperature,
                               int max_new, RngStream rng, const Vocab& vocab) {
    if (max_new < 1) throw ContractError("sample_rollout: max_new must be >= 1");
    if (prompt.ids.empty()) throw ContractError("sample_rollout: empty prompt");

    TokenSeq seq = prompt;
    seq.prompt_len = prompt.length();
    seq.logps.clear();
    seq.locate_think_markers(vocab);
    const bool expect_close = seq.think_open >= 0 && seq.think_close < 0;

    for (int step = 0; step < max_new; ++step) {
        if (seq.length() >= policy.cfg.context) break;
        PlanForward fwd = plan_forward(policy, seq.ids);
        const int64_t last = fwd.logits.shape[0] - 1;
        const int vsize = policy.cfg.vocab_size;
        std::vector<double> probs(static_cast<size_t>(vsize));
        for (int v = 0; v < vsize; ++v) probs[static_cast<size_t>(v)] = static_cast<double>(fwd.logits.at(last, v));

        int tok;
        double logp;
        if (temperature <= 0.0) {
            tok = 0;
            for (int v = 1; v < vsize; ++v)
                if (probs[static_cast<size_t>(v)] > probs[static_cast<size_t>(tok)]) tok = v;
            logp = 0.0;
        } else {
            detail::softmax_temp(probs, temperature);
            double r = rng.uniform();
            double acc = 0;
            tok = vsize - 1;
            for (int v = 0; v < vsize; ++v) {
                acc += probs[static_cast<size_t>(v)];
                if (r < acc) {
                    tok = v;
                    break;
                }
            }
            logp = std::log(probs[static_cast<size_t>(tok)]);
        }

        seq.ids.push_back(tok);
        seq.logps.push_back(logp);
        if (tok == vocab.think_close && seq.think_close < 0 && seq.think_open >= 0)
            seq.think_close = seq.length() - 1;
        if (tok == vocab.eos) break;
    }
    seq.malformed = expect_close && seq.think_close < 0;
    return seq;
}

struct ScoreNodes {
    NodeId taken_logps = -1; // (gen_len, 1)
    NodeId log_dist = -1;    // (gen_len, vocab) log-softmax rows
};

// Differentiable re-scoring of the generated region of `seq` under the bound
// parameters. Row i of the outputs corresponds to generated token i. The
// temperature must match the sampling temperature so the importance ratios
// compare like with like.
inline ScoreNodes score_sequence_t(Tape& t, const Bound& b, const PlannerConfig& cfg, const TokenSeq& seq,
                                   double temperature = 1.0) {
    if (seq.prompt_len < 1 || seq.prompt_len > seq.length())
        throw ContractError("score_sequence: generated-region boundary missing");
    if (seq.gen_len() < 1) throw ContractError("score_sequence: nothing generated");
    if (temperature <= 0.0) throw ContractError("score_sequence: temperature must be positive");
    PlanForwardNodes fwd = planner_forward_t(t, b, cfg, seq.ids);
    // logits row p predicts token p+1
    NodeId rows = t.slice(fwd.logits, seq.prompt_len - 1, seq.length() - 1, 0, cfg.vocab_size);
    if (temperature != 1.0) rows = t.scale(rows, static_cast<real>(1.0 / temperature));
    NodeId logdist = t.log_softmax_rows(rows);
    std::vector<int> taken(seq.ids.begin() + seq.prompt_len, seq.ids.end());
    ScoreNodes out;
    out.log_dist = logdist;
    out.taken_logps = t.select_per_row(logdist, taken);
    return out;
}

// Convenience non-differentiable scoring.
inline std::vector<double> score_sequence(const PlannerPolicy& policy, const TokenSeq& seq) {
    Tape t(false);
    Bound b = bind_params(t, policy.params);
    ScoreNodes s = score_sequence_t(t, b, policy.cfg, seq);
    const Array& lp = t.val(s.taken_logps);
    std::vector<double> out(static_cast<size_t>(lp.numel()));
    for (int64_t i = 0; i < lp.numel(); ++i) out[static_cast<size_t>(i)] = static_cast<double>(lp[i]);
    return out;
}

inline uint64_t planner_params_hash(const PlannerPolicy& p) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, arr] : p.params.params) {
        h = fnv1a64(name.data(), name.size(), h);
        h = hash_combine(h, array_hash(arr));
    }
    return h;
}

} // namespace thinkgen
