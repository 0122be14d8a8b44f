#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "otlm/corpus.hpp"
#include "otlm/model.hpp"

namespace otlm {

enum class HeadAgg { mean_heads, max_heads };

// d[t] scores the boundary immediately before word t (words 1-indexed, so
// values[0] is the boundary before word 2). Each d in [0, gate_dim].
struct DistanceSequence {
    std::vector<double> values; // length T-1
    std::size_t layer_index = 0;
    HeadAgg aggregation = HeadAgg::mean_heads;
};

// Unlabeled binary constituency tree; leaves are word indices 0..n-1.
struct BinaryParseTree {
    std::size_t leaf_index = 0; // valid iff no children
    std::unique_ptr<BinaryParseTree> left, right;
    bool is_leaf() const { return !left; }
};

// Per position t (2..T), per head: gate_dim - sum_k forget_gate[t,k], the
// expected number of deleted low-position neurons; larger means a larger
// constituent closes before t. Aggregated across heads.
DistanceSequence gate_distances(const ForwardTrace& trace, std::size_t layer, HeadAgg agg);

// Top-down greedy split at the largest distance (leftmost on ties), recursing
// on both sides; no depth bound.
BinaryParseTree greedy_tree(std::size_t n_words, const DistanceSequence& d);

// Spans of internal nodes, excluding width-1 and the whole sentence.
std::set<Span> tree_to_brackets(const BinaryParseTree& tree);
// All internal-node spans including the root (structural identity).
std::set<Span> tree_all_spans(const BinaryParseTree& tree);

// "(w1 ((w2 w3) w4))"-style nesting; a single word prints bare.
std::string tree_to_string(const BinaryParseTree& tree, const std::vector<std::string>& tokens);

// Inverse of tree_to_string for evaluation input; accepts n-ary brackets.
struct BracketedSentence {
    std::vector<std::string> tokens;
    std::set<Span> spans; // width >= 2, whole-sentence excluded
};
BracketedSentence read_bracketed_line(const std::string& line);

} // namespace otlm
