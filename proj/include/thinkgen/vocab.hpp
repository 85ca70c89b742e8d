#pragma once

#include <cstdio>
#include <string>
#include <unordered_map>
#include <vector>

#include "thinkgen/array.hpp"
#include "thinkgen/error.hpp"

namespace thinkgen {

// Token table shared by the planner and the micro-world. Reserved ids come
// first and are stable; world words follow in a fixed order.
struct Vocab {
    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> index;
    int sys = -1, think_open = -1, think_close = -1, eos = -1, pad = -1, img = -1;

    int size() const { return static_cast<int>(tokens.size()); }

    int id(const std::string& tok) const {
        auto it = index.find(tok);
        if (it == index.end()) throw VocabError("unknown token '" + tok + "'");
        return it->second;
    }

    const std::string& str(int tid) const {
        if (tid < 0 || tid >= size()) throw VocabError("token id " + std::to_string(tid) + " out of range");
        return tokens[static_cast<size_t>(tid)];
    }

    std::vector<int> encode(const std::vector<std::string>& words) const {
        std::vector<int> out;
        out.reserve(words.size());
        for (const auto& w : words) out.push_back(id(w));
        return out;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (i) out += ' ';
            out += str(ids[i]);
        }
        return out;
    }

    uint64_t hash() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& t : tokens) {
            h = fnv1a64(t.data(), t.size(), h);
            h = fnv1a64("\x1f", 1, h);
        }
        return h;
    }

    void push(const std::string& tok) {
        if (index.count(tok)) throw VocabError("duplicate token '" + tok + "'");
        index.emplace(tok, size());
        tokens.push_back(tok);
    }

    static Vocab with_reserved() {
        Vocab v;
        v.push("[SYS]");
        v.push("<think>");
        v.push("</think>");
        v.push("<eos>");
        v.push("<pad>");
        v.sys = 0;
        v.think_open = 1;
        v.think_close = 2;
        v.eos = 3;
        v.pad = 4;
        return v;
    }

    // Full micro-world vocabulary.
    static Vocab micro_world(int n_knowledge_keys = 200) {
        Vocab v = with_reserved();
        v.push("[IMG]");
        v.img = v.id("[IMG]");
        for (const char* w : {"one", "two", "three"}) v.push(w);
        for (const char* w : {"red", "green", "blue", "yellow", "purple", "cyan"}) v.push(w);
        for (const char* w : {"cube", "ball", "tri"}) v.push(w);
        for (const char* w : {"top", "bottom", "left", "right"}) v.push(w);
        // user-side synonyms; canonical captions never use them
        for (const char* w : {"single", "pair", "trio"}) v.push(w);
        for (const char* w : {"scarlet", "jade", "navy", "amber", "violet", "teal"}) v.push(w);
        for (const char* w : {"box", "orb", "wedge"}) v.push(w);
        for (const char* w : {"upper", "lower", "port", "starboard"}) v.push(w);
        for (int i = 0; i < 4; ++i) v.push("r" + std::to_string(i));
        for (int i = 0; i < 4; ++i) v.push("c" + std::to_string(i));
        for (char c = 'A'; c <= 'H'; ++c) v.push(std::string(1, c));
        for (const char* w : {"recolor", "remove", "add", "move", "reshape", "to", "at", "text"}) v.push(w);
        for (const char* w : {"the", "generated", "image", "is", "well", "aligned", "with", "caption"}) v.push(w);
        for (int i = 0; i < n_knowledge_keys; ++i) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "key%03d", i);
            v.push(buf);
        }
        if (v.size() > 512) throw VocabError("micro-world vocabulary exceeds 512 tokens");
        return v;
    }

    // Reserved tokens plus n generic ones; for small test policies.
    static Vocab toy(int n) {
        Vocab v = with_reserved();
        for (int i = 0; i < n; ++i) v.push("t" + std::to_string(i));
        return v;
    }
};

// A planner-side token sequence. The prompt occupies [0, prompt_len); the
// generated region follows. logps, when present, has one entry per generated
// token.
struct TokenSeq {
    std::vector<int> ids;
    int prompt_len = 0;
    int think_open = -1;  // index of <think>, -1 if absent
    int think_close = -1; // index of </think>, -1 if absent
    std::vector<double> logps;
    bool malformed = false;

    int length() const { return static_cast<int>(ids.size()); }
    int gen_len() const { return length() - prompt_len; }

    uint64_t ids_hash() const { return fnv1a64(ids.data(), ids.size() * sizeof(int)); }

    void locate_think_markers(const Vocab& v) {
        think_open = think_close = -1;
        for (int i = 0; i < length(); ++i) {
            if (ids[i] == v.think_open && think_open < 0) think_open = i;
            if (ids[i] == v.think_close && think_close < 0) think_close = i;
        }
        if (think_open >= 0 && think_close >= 0 && think_open >= think_close)
            throw ContractError("token sequence has </think> before <think>");
    }

    // tokens strictly after </think>
    std::vector<int> post_think_tokens() const {
        std::vector<int> out;
        if (think_close < 0) return out;
        for (int i = think_close + 1; i < length(); ++i) out.push_back(ids[i]);
        return out;
    }
};

} // namespace thinkgen
