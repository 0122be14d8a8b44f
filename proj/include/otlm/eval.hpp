#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "otlm/corpus.hpp"
#include "otlm/rng.hpp"
#include "otlm/tree.hpp"

namespace otlm {

struct SentenceScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct F1Report {
    std::vector<SentenceScore> per_sentence;
    double micro_precision = 0.0;
    double micro_recall = 0.0;
    double micro_f1 = 0.0;
    double macro_f1 = 0.0;
    std::size_t n_sentences = 0;     // pairs scored (macro denominator)
    std::size_t n_pred_spans = 0;    // micro counts; gold-empty sentences excluded
    std::size_t n_gold_spans = 0;
    std::size_t n_matched = 0;
    std::size_t n_skipped_no_gold_spans = 0;
};

// Unlabeled span P/R/F1 with the width>=2, no-whole-sentence convention.
// Both sets empty -> (1,1,1); one side empty -> that side's ratio is 0.
SentenceScore span_f1(const std::set<Span>& pred, const std::set<Span>& gold);

struct EvalPair {
    std::vector<std::string> pred_tokens;
    std::set<Span> pred_spans;
    std::vector<std::string> gold_tokens;
    std::set<Span> gold_spans;
};

// Micro over sentences with non-empty gold span sets; macro over all.
// Token-count mismatch raises Error naming the sentence index.
F1Report corpus_f1(const std::vector<EvalPair>& pairs);

enum class BaselineStrategy { right_branching, left_branching, balanced, random };

BaselineStrategy baseline_from_name(const std::string& name);
const char* baseline_name(BaselineStrategy s);

// random draws a distance permutation from rng and runs greedy_tree.
BinaryParseTree baseline_tree(BaselineStrategy strategy, std::size_t n_words, Rng* rng = nullptr);

} // namespace otlm
