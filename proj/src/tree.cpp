#include "otlm/tree.hpp"

#include <algorithm>
#include <cctype>

namespace otlm {

DistanceSequence gate_distances(const ForwardTrace& trace, std::size_t layer, HeadAgg agg) {
    if (layer >= trace.per_layer.size())
        fail("gate_distances: layer " + std::to_string(layer) + " out of range [0," +
             std::to_string(trace.per_layer.size()) + ")");
    const Tensor& forget = trace.per_layer[layer].forget_gates; // [T, n_heads, gate_dim]
    const std::size_t t_len = forget.dim(0), n_heads = forget.dim(1), gate_dim = forget.dim(2);
    if (t_len < 2) fail("gate_distances: need at least 2 positions, got " + std::to_string(t_len));

    DistanceSequence d;
    d.layer_index = layer;
    d.aggregation = agg;
    d.values.reserve(t_len - 1);
    for (std::size_t t = 1; t < t_len; ++t) {
        double acc = agg == HeadAgg::mean_heads ? 0.0 : -1.0;
        for (std::size_t head = 0; head < n_heads; ++head) {
            double kept = 0.0;
            for (std::size_t k = 0; k < gate_dim; ++k)
                kept += forget.values()[(t * n_heads + head) * gate_dim + k];
            const double deleted = static_cast<double>(gate_dim) - kept;
            if (agg == HeadAgg::mean_heads)
                acc += deleted;
            else
                acc = std::max(acc, deleted);
        }
        if (agg == HeadAgg::mean_heads) acc /= static_cast<double>(n_heads);
        d.values.push_back(acc);
    }
    return d;
}

namespace {

BinaryParseTree leaf(std::size_t index) {
    BinaryParseTree t;
    t.leaf_index = index;
    return t;
}

// Words l..r inclusive; d.values[i] is the boundary before word i+1
// (0-indexed words), so candidate split points s in (l, r] use d.values[s-1].
BinaryParseTree build(std::size_t l, std::size_t r, const std::vector<double>& d) {
    if (l == r) return leaf(l);
    std::size_t best = l + 1;
    for (std::size_t s = l + 2; s <= r; ++s)
        if (d[s - 1] > d[best - 1]) best = s;
    BinaryParseTree node;
    node.left = std::make_unique<BinaryParseTree>(build(l, best - 1, d));
    node.right = std::make_unique<BinaryParseTree>(build(best, r, d));
    return node;
}

std::pair<std::size_t, std::size_t> spans_rec(const BinaryParseTree& t, std::set<Span>& out) {
    if (t.is_leaf()) return {t.leaf_index, t.leaf_index};
    const auto [ls, le] = spans_rec(*t.left, out);
    const auto [rs, re] = spans_rec(*t.right, out);
    (void)le;
    (void)rs;
    out.insert({ls, re});
    return {ls, re};
}

} // namespace

BinaryParseTree greedy_tree(std::size_t n_words, const DistanceSequence& d) {
    if (n_words == 0) fail("greedy_tree: need at least one word");
    if (d.values.size() != n_words - 1)
        fail("greedy_tree: " + std::to_string(d.values.size()) + " distances for " +
             std::to_string(n_words) + " words (need n-1)");
    return build(0, n_words - 1, d.values);
}

std::set<Span> tree_all_spans(const BinaryParseTree& tree) {
    std::set<Span> out;
    spans_rec(tree, out);
    return out;
}

std::set<Span> tree_to_brackets(const BinaryParseTree& tree) {
    std::set<Span> all = tree_all_spans(tree);
    std::size_t max_end = 0;
    for (const auto& sp : all) max_end = std::max(max_end, sp.second);
    std::set<Span> kept;
    for (const auto& sp : all) {
        if (sp.second <= sp.first) continue;               // width 1
        if (sp.first == 0 && sp.second == max_end) continue; // whole sentence
        kept.insert(sp);
    }
    return kept;
}

std::string tree_to_string(const BinaryParseTree& tree, const std::vector<std::string>& tokens) {
    if (tree.is_leaf()) {
        if (tree.leaf_index >= tokens.size())
            fail("tree_to_string: leaf index " + std::to_string(tree.leaf_index) + " vs " +
                 std::to_string(tokens.size()) + " tokens");
        return tokens[tree.leaf_index];
    }
    return "(" + tree_to_string(*tree.left, tokens) + " " + tree_to_string(*tree.right, tokens) + ")";
}

// ---------------------------------------------------------------------------
// Unlabeled bracket reader
// ---------------------------------------------------------------------------

namespace {

struct BracketLexer {
    const std::string& text;
    std::size_t pos = 0;
    void skip_ws() {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    }
    bool done() {
        skip_ws();
        return pos >= text.size();
    }
    char peek() {
        skip_ws();
        return text[pos];
    }
    std::string word() {
        skip_ws();
        const std::size_t start = pos;
        while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) &&
               text[pos] != '(' && text[pos] != ')')
            ++pos;
        return text.substr(start, pos - start);
    }
};

// Returns the span covered; appends words in order.
std::pair<std::size_t, std::size_t> parse_unit(BracketLexer& lex, std::vector<std::string>& tokens,
                                               std::set<Span>& spans) {
    if (lex.done()) fail("bracketed tree: unexpected end of line at byte " + std::to_string(lex.pos));
    if (lex.peek() != '(') {
        const std::string w = lex.word();
        if (w.empty()) fail("bracketed tree: empty token at byte " + std::to_string(lex.pos));
        tokens.push_back(w);
        const std::size_t idx = tokens.size() - 1;
        return {idx, idx};
    }
    ++lex.pos; // '('
    std::size_t start = tokens.size(), end = tokens.size();
    bool first = true;
    while (true) {
        if (lex.done()) fail("bracketed tree: unbalanced parentheses at byte " + std::to_string(lex.pos));
        if (lex.peek() == ')') {
            ++lex.pos;
            break;
        }
        const auto [s, e] = parse_unit(lex, tokens, spans);
        if (first) start = s;
        first = false;
        end = e;
    }
    if (first) fail("bracketed tree: empty brackets at byte " + std::to_string(lex.pos));
    spans.insert({start, end});
    return {start, end};
}

} // namespace

BracketedSentence read_bracketed_line(const std::string& line) {
    BracketLexer lex{line};
    BracketedSentence out;
    std::set<Span> raw;
    parse_unit(lex, out.tokens, raw);
    if (!lex.done())
        fail("bracketed tree: trailing content at byte " + std::to_string(lex.pos));
    const std::size_t n = out.tokens.size();
    for (const auto& sp : raw) {
        if (sp.second <= sp.first) continue;
        if (sp.first == 0 && sp.second == n - 1) continue;
        out.spans.insert(sp);
    }
    return out;
}

} // namespace otlm
