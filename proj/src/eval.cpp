#include "otlm/eval.hpp"

#include <algorithm>

namespace otlm {

SentenceScore span_f1(const std::set<Span>& pred, const std::set<Span>& gold) {
    for (const auto& s : pred)
        if (s.second <= s.first)
            fail("span_f1: malformed pred span (" + std::to_string(s.first) + "," +
                 std::to_string(s.second) + ")");
    for (const auto& s : gold)
        if (s.second <= s.first)
            fail("span_f1: malformed gold span (" + std::to_string(s.first) + "," +
                 std::to_string(s.second) + ")");

    if (pred.empty() && gold.empty()) return {1.0, 1.0, 1.0};

    std::size_t matched = 0;
    for (const auto& s : pred) matched += gold.count(s);

    SentenceScore score;
    score.precision = pred.empty() ? 0.0 : static_cast<double>(matched) / static_cast<double>(pred.size());
    score.recall = gold.empty() ? 0.0 : static_cast<double>(matched) / static_cast<double>(gold.size());
    score.f1 = (score.precision + score.recall) == 0.0
                   ? 0.0
                   : 2.0 * score.precision * score.recall / (score.precision + score.recall);
    return score;
}

F1Report corpus_f1(const std::vector<EvalPair>& pairs) {
    if (pairs.empty()) fail("corpus_f1: empty corpus");

    F1Report report;
    double macro_sum = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        if (p.pred_tokens.size() != p.gold_tokens.size())
            fail("corpus_f1: sentence " + std::to_string(i) + ": " +
                 std::to_string(p.pred_tokens.size()) + " predicted tokens vs " +
                 std::to_string(p.gold_tokens.size()) + " gold tokens");

        const SentenceScore s = span_f1(p.pred_spans, p.gold_spans);
        report.per_sentence.push_back(s);
        macro_sum += s.f1;

        if (p.gold_spans.empty()) {
            ++report.n_skipped_no_gold_spans;
            continue;
        }
        std::size_t matched = 0;
        for (const auto& sp : p.pred_spans) matched += p.gold_spans.count(sp);
        report.n_pred_spans += p.pred_spans.size();
        report.n_gold_spans += p.gold_spans.size();
        report.n_matched += matched;
    }

    report.n_sentences = pairs.size();
    report.macro_f1 = macro_sum / static_cast<double>(pairs.size());
    report.micro_precision = report.n_pred_spans == 0
                                 ? 0.0
                                 : static_cast<double>(report.n_matched) /
                                       static_cast<double>(report.n_pred_spans);
    report.micro_recall = report.n_gold_spans == 0
                              ? 0.0
                              : static_cast<double>(report.n_matched) /
                                    static_cast<double>(report.n_gold_spans);
    report.micro_f1 = (report.micro_precision + report.micro_recall) == 0.0
                          ? 0.0
                          : 2.0 * report.micro_precision * report.micro_recall /
                                (report.micro_precision + report.micro_recall);
    return report;
}

BaselineStrategy baseline_from_name(const std::string& name) {
    if (name == "right_branching") return BaselineStrategy::right_branching;
    if (name == "left_branching") return BaselineStrategy::left_branching;
    if (name == "balanced") return BaselineStrategy::balanced;
    if (name == "random") return BaselineStrategy::random;
    fail("unknown baseline strategy: \"" + name + "\"");
}

const char* baseline_name(BaselineStrategy s) {
    switch (s) {
        case BaselineStrategy::right_branching: return "right_branching";
        case BaselineStrategy::left_branching: return "left_branching";
        case BaselineStrategy::balanced: return "balanced";
        case BaselineStrategy::random: return "random";
    }
    return "?";
}

namespace {

BinaryParseTree leaf(std::size_t i) {
    BinaryParseTree t;
    t.leaf_index = i;
    return t;
}

BinaryParseTree make_node(BinaryParseTree l, BinaryParseTree r) {
    BinaryParseTree t;
    t.left = std::make_unique<BinaryParseTree>(std::move(l));
    t.right = std::make_unique<BinaryParseTree>(std::move(r));
    return t;
}

BinaryParseTree right_branching(std::size_t l, std::size_t r) {
    if (l == r) return leaf(l);
    return make_node(leaf(l), right_branching(l + 1, r));
}

BinaryParseTree left_branching(std::size_t l, std::size_t r) {
    if (l == r) return leaf(r);
    return make_node(left_branching(l, r - 1), leaf(r));
}

// Midpoint split, extra word to the left on odd widths.
BinaryParseTree balanced(std::size_t l, std::size_t r) {
    if (l == r) return leaf(l);
    const std::size_t width = r - l + 1;
    const std::size_t split = l + (width + 1) / 2; // first word of the right part
    return make_node(balanced(l, split - 1), balanced(split, r));
}

} // namespace

BinaryParseTree baseline_tree(BaselineStrategy strategy, std::size_t n_words, Rng* rng) {
    if (n_words == 0) fail("baseline_tree: need at least one word");
    if (n_words == 1) return leaf(0);
    switch (strategy) {
        case BaselineStrategy::right_branching: return right_branching(0, n_words - 1);
        case BaselineStrategy::left_branching: return left_branching(0, n_words - 1);
        case BaselineStrategy::balanced: return balanced(0, n_words - 1);
        case BaselineStrategy::random: {
            if (!rng) fail("baseline_tree: random strategy needs a seeded rng");
            DistanceSequence d;
            d.values.resize(n_words - 1);
            for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] = static_cast<double>(i + 1);
            shuffle(d.values, *rng);
            return greedy_tree(n_words, d);
        }
    }
    fail("baseline_tree: unknown strategy");
}

} // namespace otlm
