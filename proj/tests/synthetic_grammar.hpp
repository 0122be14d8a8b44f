// Deterministic PCFG sentence generator with gold constituency structure,
// used by the acceptance suite: the grammar is unambiguous enough that its
// derivation trees are the gold parses by construction.

#pragma once

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "otlm/corpus.hpp"
#include "otlm/rng.hpp"

namespace syngram {

struct Sentence {
    std::vector<std::string> tokens;
    std::set<otlm::Span> gold_spans; // width >= 2, whole sentence excluded
    std::string ptb;                 // labeled bracketing (for file fixtures)
};

namespace detail {

struct Node {
    std::string label;
    std::string word;
    std::vector<Node> children;
    bool is_leaf() const { return !word.empty(); }
};

inline const std::vector<std::string>& pool(const std::string& tag) {
    static const std::vector<std::string> det = {"the", "a"};
    static const std::vector<std::string> noun = {"cat", "dog", "bird", "fish", "man", "house"};
    static const std::vector<std::string> adj = {"big", "old", "red"};
    static const std::vector<std::string> verb = {"sees", "likes", "finds", "chases"};
    static const std::vector<std::string> prep = {"with", "near"};
    if (tag == "Det") return det;
    if (tag == "N") return noun;
    if (tag == "Adj") return adj;
    if (tag == "V") return verb;
    return prep;
}

inline Node leaf(const std::string& tag, otlm::Rng& rng) {
    const auto& words = pool(tag);
    return {tag, words[otlm::rng_below(rng, words.size())], {}};
}

inline Node make_np(otlm::Rng& rng, int depth);

inline Node make_pp(otlm::Rng& rng, int depth) {
    Node pp{"PP", "", {}};
    pp.children.push_back(leaf("P", rng));
    pp.children.push_back(make_np(rng, depth + 1));
    return pp;
}

inline Node make_np(otlm::Rng& rng, int depth) {
    const double roll = otlm::rng_uniform01(rng);
    Node np{"NP", "", {}};
    if (depth < 2 && roll < 0.18) {
        np.children.push_back(make_np(rng, depth + 1));
        np.children.push_back(make_pp(rng, depth + 1));
    } else if (roll < 0.55) {
        np.children.push_back(leaf("Det", rng));
        np.children.push_back(leaf("N", rng));
    } else {
        np.children.push_back(leaf("Det", rng));
        np.children.push_back(leaf("Adj", rng));
        np.children.push_back(leaf("N", rng));
    }
    return np;
}

inline Node make_vp(otlm::Rng& rng, int depth) {
    const double roll = otlm::rng_uniform01(rng);
    Node vp{"VP", "", {}};
    vp.children.push_back(leaf("V", rng));
    if (roll < 0.2) {
        // intransitive
    } else if (depth < 2 && roll < 0.45) {
        vp.children.push_back(make_np(rng, depth + 1));
        vp.children.push_back(make_pp(rng, depth + 1));
    } else {
        vp.children.push_back(make_np(rng, depth + 1));
    }
    return vp;
}

inline void collect_tokens(const Node& n, std::vector<std::string>& out) {
    if (n.is_leaf()) {
        out.push_back(n.word);
        return;
    }
    for (const auto& c : n.children) collect_tokens(c, out);
}

inline std::pair<std::size_t, std::size_t> collect_spans(const Node& n, std::size_t& cursor,
                                                         std::size_t n_words,
                                                         std::set<otlm::Span>& out) {
    if (n.is_leaf()) {
        const std::size_t i = cursor++;
        return {i, i};
    }
    std::size_t s = cursor, e = cursor;
    for (std::size_t i = 0; i < n.children.size(); ++i) {
        const auto [cs, ce] = collect_spans(n.children[i], cursor, n_words, out);
        if (i == 0) s = cs;
        e = ce;
    }
    if (e > s && !(s == 0 && e + 1 == n_words)) out.insert({s, e});
    return {s, e};
}

inline std::string to_ptb(const Node& n) {
    if (n.is_leaf()) return "(" + n.label + " " + n.word + ")";
    std::string out = "(" + n.label;
    for (const auto& c : n.children) out += " " + to_ptb(c);
    return out + ")";
}

} // namespace detail

// Sentences are capped at max_words (regenerated otherwise), so the corpus
// stays WSJ10-shaped.
inline std::vector<Sentence> generate(std::size_t count, std::uint64_t seed,
                                      std::size_t max_words = 10) {
    otlm::Rng rng(seed);
    std::vector<Sentence> out;
    out.reserve(count);
    while (out.size() < count) {
        detail::Node s{"S", "", {}};
        s.children.push_back(detail::make_np(rng, 1));
        s.children.push_back(detail::make_vp(rng, 1));

        Sentence sent;
        detail::collect_tokens(s, sent.tokens);
        if (sent.tokens.size() > max_words || sent.tokens.size() < 3) continue;
        std::size_t cursor = 0;
        detail::collect_spans(s, cursor, sent.tokens.size(), sent.gold_spans);
        sent.ptb = detail::to_ptb(s);
        out.push_back(std::move(sent));
    }
    return out;
}

} // namespace syngram
