#include <doctest.h>

#include <cmath>

#include "otlm/eval.hpp"

using namespace otlm;

namespace {

std::vector<std::string> words(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 1; i <= n; ++i) out.push_back("w" + std::to_string(i));
    return out;
}

} // namespace

TEST_SUITE("evaluation") {

TEST_CASE("identical non-empty span sets score perfectly") {
    const std::set<Span> s = {{0, 1}, {0, 2}};
    const SentenceScore r = span_f1(s, s);
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    CHECK(r.f1 == 1.0);
}

TEST_CASE("disjoint span sets score zero") {
    const SentenceScore r = span_f1({{0, 1}}, {{1, 2}});
    CHECK(r.precision == 0.0);
    CHECK(r.recall == 0.0);
    CHECK(r.f1 == 0.0);
}

TEST_CASE("the two-thirds fixture") {
    const std::set<Span> pred = {{0, 1}, {0, 2}, {3, 4}};
    const std::set<Span> gold = {{0, 2}, {2, 4}, {3, 4}};
    const SentenceScore r = span_f1(pred, gold);
    CHECK(r.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(r.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(r.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("empty-set conventions") {
    CHECK(span_f1({}, {}).f1 == 1.0);
    const SentenceScore r = span_f1({}, {{0, 1}});
    CHECK(r.precision == 0.0);
    CHECK(r.recall == 0.0);
    CHECK(r.f1 == 0.0);
    const SentenceScore q = span_f1({{0, 1}}, {});
    CHECK(q.precision == 0.0);
    CHECK(q.recall == 0.0);
}

TEST_CASE("malformed spans are rejected") {
    CHECK_THROWS_AS(span_f1({{2, 2}}, {}), Error);
    CHECK_THROWS_AS(span_f1({}, {{3, 1}}), Error);
}

TEST_CASE("swapping pred and gold swaps precision and recall") {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
        std::set<Span> a, b;
        for (int i = 0; i < 5; ++i) {
            const std::size_t s1 = rng_below(rng, 8);
            a.insert({s1, s1 + 1 + rng_below(rng, 3)});
            const std::size_t s2 = rng_below(rng, 8);
            b.insert({s2, s2 + 1 + rng_below(rng, 3)});
        }
        const SentenceScore ab = span_f1(a, b);
        const SentenceScore ba = span_f1(b, a);
        CHECK(ab.precision == ba.recall);
        CHECK(ab.recall == ba.precision);
        CHECK(ab.f1 == doctest::Approx(ba.f1).epsilon(1e-12));
    }
}

TEST_CASE("adding a correct span never hurts F1; an incorrect one never helps precision") {
    const std::set<Span> gold = {{0, 2}, {3, 4}, {0, 4}};
    std::set<Span> pred = {{0, 2}};
    const double f1_before = span_f1(pred, gold).f1;
    pred.insert({3, 4});
    CHECK(span_f1(pred, gold).f1 >= f1_before);

    const double p_before = span_f1(pred, gold).precision;
    pred.insert({1, 3});
    CHECK(span_f1(pred, gold).precision <= p_before);
}

TEST_CASE("corpus aggregation: identical pairs give micro 1.0") {
    EvalPair pair;
    pair.pred_tokens = pair.gold_tokens = words(4);
    pair.pred_spans = pair.gold_spans = {{0, 1}, {0, 2}};
    const F1Report r = corpus_f1({pair, pair});
    CHECK(r.micro_f1 == 1.0);
    CHECK(r.macro_f1 == 1.0);
    CHECK(r.n_matched == 4);
}

TEST_CASE("one perfect and one fully-wrong pair with equal counts give micro 0.5") {
    EvalPair good;
    good.pred_tokens = good.gold_tokens = words(4);
    good.pred_spans = good.gold_spans = {{0, 1}, {0, 2}};
    EvalPair bad;
    bad.pred_tokens = bad.gold_tokens = words(4);
    bad.pred_spans = {{0, 1}, {0, 2}};
    bad.gold_spans = {{1, 2}, {1, 3}};
    const F1Report r = corpus_f1({good, bad});
    CHECK(r.micro_precision == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.micro_recall == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.micro_f1 == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.macro_f1 == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("empty corpus and token mismatches are errors") {
    CHECK_THROWS_AS(corpus_f1({}), Error);
    EvalPair pair;
    pair.pred_tokens = words(3);
    pair.gold_tokens = words(4);
    CHECK_THROWS_WITH_AS(corpus_f1({pair}), doctest::Contains("sentence 0"), Error);
}

TEST_CASE("gold-empty sentences stay out of micro but count 1.0 in macro") {
    EvalPair two_words;
    two_words.pred_tokens = two_words.gold_tokens = words(2);
    EvalPair real;
    real.pred_tokens = real.gold_tokens = words(4);
    real.pred_spans = {{0, 1}};
    real.gold_spans = {{0, 1}, {2, 3}};
    const F1Report r = corpus_f1({two_words, real});
    CHECK(r.n_skipped_no_gold_spans == 1);
    CHECK(r.n_pred_spans == 1);
    CHECK(r.n_gold_spans == 2);
    CHECK(r.micro_precision == 1.0);
    CHECK(r.micro_recall == 0.5);
    const double sentence_f1 = 2.0 * 1.0 * 0.5 / 1.5;
    CHECK(r.macro_f1 == doctest::Approx((1.0 + sentence_f1) / 2.0).epsilon(1e-12));
}

TEST_CASE("right- and left-branching span sets match the hand enumeration") {
    BinaryParseTree rb = baseline_tree(BaselineStrategy::right_branching, 4);
    CHECK(tree_to_brackets(rb) == std::set<Span>{{1, 3}, {2, 3}});
    BinaryParseTree lb = baseline_tree(BaselineStrategy::left_branching, 4);
    CHECK(tree_to_brackets(lb) == std::set<Span>{{0, 1}, {0, 2}});
}

TEST_CASE("balanced splits at the midpoint, left-biased on odd") {
    BinaryParseTree b5 = baseline_tree(BaselineStrategy::balanced, 5);
    CHECK(tree_to_string(b5, words(5)) == "(((w1 w2) w3) (w4 w5))");
}

TEST_CASE("short sentences have empty evaluable span sets for every strategy") {
    Rng rng(4);
    for (auto s : {BaselineStrategy::right_branching, BaselineStrategy::left_branching,
                   BaselineStrategy::balanced, BaselineStrategy::random}) {
        CHECK(tree_to_brackets(baseline_tree(s, 1, &rng)).empty());
        CHECK(tree_to_brackets(baseline_tree(s, 2, &rng)).empty());
    }
}

TEST_CASE("the random baseline is reproducible from its seed") {
    auto run = [] {
        Rng rng(2024);
        std::string out;
        for (int i = 0; i < 20; ++i) {
            BinaryParseTree t = baseline_tree(BaselineStrategy::random, 3 + (i % 8), &rng);
            out += tree_to_string(t, words(3 + (i % 8)));
            out += '\n';
        }
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("unknown strategy names are rejected") {
    CHECK_THROWS_AS(baseline_from_name("middle_out"), Error);
    CHECK(baseline_from_name("random") == BaselineStrategy::random);
}

TEST_CASE("random baseline lands strictly between the branching extremes on right-skewed gold") {
    // Gold: 1000 ten-word sentences, all right-branching.
    const std::size_t n = 10;
    const auto gold_spans = tree_to_brackets(baseline_tree(BaselineStrategy::right_branching, n));

    auto strategy_mean = [&](BaselineStrategy s, Rng& rng) {
        double total = 0.0;
        for (int i = 0; i < 1000; ++i) {
            BinaryParseTree t = baseline_tree(s, n, &rng);
            total += span_f1(tree_to_brackets(t), gold_spans).f1;
        }
        return total / 1000.0;
    };

    Rng rng(31337);
    const double rb = strategy_mean(BaselineStrategy::right_branching, rng);
    const double lb = strategy_mean(BaselineStrategy::left_branching, rng);
    const double rnd = strategy_mean(BaselineStrategy::random, rng);
    CHECK(rb == 1.0);
    CHECK(lb == 0.0);
    CHECK(rnd > lb);
    CHECK(rnd < rb);
}

} // TEST_SUITE
