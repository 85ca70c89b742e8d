#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "thinkgen/array.hpp"
#include "thinkgen/error.hpp"
#include "thinkgen/rng.hpp"
#include "thinkgen/tape.hpp"

namespace thinkgen {

struct ParamStore {
    std::map<std::string, Array> params;

    Array& at(const std::string& name) {
        auto it = params.find(name);
        if (it == params.end()) throw ContractError("no parameter named " + name);
        return it->second;
    }
    const Array& at(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw ContractError("no parameter named " + name);
        return it->second;
    }
    void insert(const std::string& name, Array a) {
        if (params.count(name)) throw ContractError("duplicate parameter " + name);
        params.emplace(name, std::move(a));
    }
    bool has(const std::string& name) const { return params.count(name) > 0; }
    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(params.size());
        for (const auto& [k, v] : params) out.push_back(k);
        return out;
    }
    int64_t numel() const {
        int64_t n = 0;
        for (const auto& [k, v] : params) n += v.numel();
        return n;
    }
    std::map<std::string, uint64_t> hashes() const {
        std::map<std::string, uint64_t> h;
        for (const auto& [k, v] : params) h[k] = array_hash(v);
        return h;
    }
};

struct TrainableSet {
    bool all = false;
    std::set<std::string> names;

    bool contains(const std::string& n) const { return all || names.count(n) > 0; }

    static TrainableSet none() { return {}; }
    static TrainableSet everything() {
        TrainableSet t;
        t.all = true;
        return t;
    }
    static TrainableSet of(std::set<std::string> names) {
        TrainableSet t;
        t.names = std::move(names);
        return t;
    }
};

// Parameters leafed onto a tape for one forward pass.
struct Bound {
    Tape* tape = nullptr;
    std::map<std::string, NodeId> ids;

    NodeId at(const std::string& name) const {
        auto it = ids.find(name);
        if (it == ids.end()) throw ContractError("unbound parameter " + name);
        return it->second;
    }
};

inline Bound bind_params(Tape& t, const ParamStore& ps, const TrainableSet& trainable = TrainableSet::none()) {
    Bound b;
    b.tape = &t;
    for (const auto& [name, value] : ps.params) b.ids[name] = t.leaf(value, trainable.contains(name));
    return b;
}

// Pulls gradients of trainable parameters off a differentiated tape, prefixing
// names so several stores can share one gradient map.
inline void collect_grads(const Tape& t, const Bound& b, const TrainableSet& trainable,
                          std::map<std::string, Array>& out, const std::string& prefix = "") {
    for (const auto& [name, id] : b.ids) {
        if (!trainable.contains(name)) continue;
        auto g = t.grad(id);
        if (!g) continue;
        auto key = prefix + name;
        auto it = out.find(key);
        if (it == out.end()) {
            out.emplace(key, std::move(*g));
        } else {
            for (int64_t i = 0; i < it->second.numel(); ++i) it->second[i] += (*g)[i];
        }
    }
}

// AdamW with global-norm gradient clipping. Optimizer state is keyed by the
// same (possibly prefixed) names as the gradient map.
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-9;
    double weight_decay = 0.0;
    double clip_norm = 1.0;

    int64_t t = 0;
    std::map<std::string, Array> m_, v_;

    // `resolve` maps a gradient key to the parameter array it updates.
    template <typename Resolve>
    void step(const std::map<std::string, Array>& grads, Resolve&& resolve, double lr_now) {
        ++t;
        double sq = 0.0;
        for (const auto& [k, g] : grads)
            for (real v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
        const double norm = std::sqrt(sq);
        const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (const auto& [k, g] : grads) {
            Array& p = resolve(k);
            if (!p.same_shape(g)) throw ShapeError("adam: grad shape mismatch for " + k);
            auto& m = m_[k];
            auto& v = v_[k];
            if (m.data.empty()) m = Array::zeros(g.shape);
            if (v.data.empty()) v = Array::zeros(g.shape);
            for (int64_t i = 0; i < g.numel(); ++i) {
                const double gi = static_cast<double>(g[i]) * scale;
                m[i] = static_cast<real>(beta1 * m[i] + (1.0 - beta1) * gi);
                v[i] = static_cast<real>(beta2 * v[i] + (1.0 - beta2) * gi * gi);
                const double mh = m[i] / bc1;
                const double vh = v[i] / bc2;
                double upd = lr_now * mh / (std::sqrt(vh) + eps);
                if (weight_decay > 0.0) upd += lr_now * weight_decay * p[i];
                p[i] = static_cast<real>(p[i] - upd);
            }
        }
    }
};

enum class LrSchedule { Constant, Cosine };

inline double lr_at(LrSchedule sched, double base, int64_t step, int64_t total, int64_t warmup) {
    if (warmup > 0 && step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (sched == LrSchedule::Constant) return base;
    const double p = total > warmup
                         ? static_cast<double>(step - warmup) / static_cast<double>(total - warmup)
                         : 0.0;
    return base * 0.5 * (1.0 + std::cos(3.141592653589793 * std::min(1.0, p)));
}

// ---- transformer building blocks --------------------------------------------

inline void init_linear(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out, RngStream& rng,
                        real std = real(0.02), bool bias = true) {
    ps.insert(prefix + ".w", Array::randn({in, out}, rng, std));
    if (bias) ps.insert(prefix + ".b", Array::zeros({1, out}));
}

inline NodeId linear(Tape& t, const Bound& b, const std::string& prefix, NodeId x) {
    NodeId y = t.matmul(x, b.at(prefix + ".w"));
    auto it = b.ids.find(prefix + ".b");
    if (it != b.ids.end()) y = t.add(y, it->second);
    return y;
}

inline void init_block(ParamStore& ps, const std::string& prefix, int64_t d, RngStream& rng, real std = real(0.02)) {
    ps.insert(prefix + ".ln1.g", Array::full({1, d}, real(1)));
    ps.insert(prefix + ".ln1.b", Array::zeros({1, d}));
    ps.insert(prefix + ".wq", Array::randn({d, d}, rng, std));
    ps.insert(prefix + ".wk", Array::randn({d, d}, rng, std));
    ps.insert(prefix + ".wv", Array::randn({d, d}, rng, std));
    ps.insert(prefix + ".wo", Array::randn({d, d}, rng, std));
    ps.insert(prefix + ".ln2.g", Array::full({1, d}, real(1)));
    ps.insert(prefix + ".ln2.b", Array::zeros({1, d}));
    init_linear(ps, prefix + ".fc1", d, 4 * d, rng, std);
    init_linear(ps, prefix + ".fc2", 4 * d, d, rng, std);
}

inline Array causal_mask(int64_t n) {
    Array m = Array::zeros({n, n});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j) m.at(i, j) = real(-1e9);
    return m;
}

// Pre-LN block: x + attn(ln1(x)); x + mlp(ln2(x)).
inline NodeId transformer_block(Tape& t, const Bound& b, const std::string& prefix, NodeId x, int heads,
                                bool causal) {
    const int64_t n = t.val(x).shape[0];
    const int64_t d = t.val(x).shape[1];
    if (d % heads != 0) throw ShapeError("block: width not divisible by heads");
    const int64_t dh = d / heads;

    NodeId h = t.layer_norm(x, b.at(prefix + ".ln1.g"), b.at(prefix + ".ln1.b"));
    NodeId q = t.matmul(h, b.at(prefix + ".wq"));
    NodeId k = t.matmul(h, b.at(prefix + ".wk"));
    NodeId v = t.matmul(h, b.at(prefix + ".wv"));
    NodeId mask = causal ? t.constant(causal_mask(n)) : NodeId(-1);

    NodeId attn_out = NodeId(-1);
    for (int hd = 0; hd < heads; ++hd) {
        const int64_t c0 = hd * dh, c1 = (hd + 1) * dh;
        NodeId qh = t.slice(q, 0, n, c0, c1);
        NodeId kh = t.slice(k, 0, n, c0, c1);
        NodeId vh = t.slice(v, 0, n, c0, c1);
        NodeId scores = t.scale(t.matmul_nt(qh, kh), real(1) / std::sqrt(static_cast<real>(dh)));
        if (causal) scores = t.add(scores, mask);
        NodeId probs = t.softmax_rows(scores);
        NodeId ctx = t.matmul(probs, vh);
        // applying Wo per head slice and summing equals projecting the
        // column-concatenated heads
        NodeId part = t.matmul(ctx, t.slice(b.at(prefix + ".wo"), c0, c1, 0, d));
        attn_out = (attn_out < 0) ? part : t.add(attn_out, part);
    }
    x = t.add(x, attn_out);

    NodeId h2 = t.layer_norm(x, b.at(prefix + ".ln2.g"), b.at(prefix + ".ln2.b"));
    NodeId f = t.gelu(linear(t, b, prefix + ".fc1", h2));
    NodeId mlp = linear(t, b, prefix + ".fc2", f);
    return t.add(x, mlp);
}

// sin/cos features of a scalar in [0,1]; geometric frequency ladder.
inline Array time_features(double tval, int n_freqs) {
    Array f = Array::zeros({1, 2 * static_cast<int64_t>(n_freqs)});
    double omega = 3.141592653589793;
    for (int i = 0; i < n_freqs; ++i) {
        f[2 * i] = static_cast<real>(std::sin(omega * tval));
        f[2 * i + 1] = static_cast<real>(std::cos(omega * tval));
        omega *= 2.0;
    }
    return f;
}

} // namespace thinkgen
