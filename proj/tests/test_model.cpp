#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "otlm/model.hpp"
#include "reference_impls.hpp"

using namespace otlm;
namespace fs = std::filesystem;

namespace {

struct WideMode {
    Precision saved;
    WideMode() : saved(precision()) { set_precision(Precision::wide); }
    ~WideMode() { set_precision(saved); }
};

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 11;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.gate_dim = 2;
    cfg.chunk_factor = 2;
    cfg.max_seq_len = 8;
    return cfg;
}

ref::BlockParams mirror(LayerParams& p) {
    ref::BlockParams r;
    r.w_q = p.w_q.values();
    r.w_k = p.w_k.values();
    r.w_v = p.w_v.values();
    r.w_o = p.w_o.values();
    r.w_i = p.w_i.values();
    r.b_i = p.b_i.values();
    r.w_f = p.w_f.values();
    r.b_f = p.b_f.values();
    r.ff_w1 = p.ff_w1.values();
    r.ff_b1 = p.ff_b1.values();
    r.ff_w2 = p.ff_w2.values();
    r.ff_b2 = p.ff_b2.values();
    r.ln1_g = p.ln1_gamma.values();
    r.ln1_b = p.ln1_beta.values();
    r.ln2_g = p.ln2_gamma.values();
    r.ln2_b = p.ln2_beta.values();
    return r;
}

std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / ("otlm_test_" + name)).string();
}

} // namespace

TEST_SUITE("transformer-lm") {

TEST_CASE("logits have shape (T, V) and rows softmax-normalize") {
    WideMode wide;
    Rng rng(3);
    ModelWeights w = ModelWeights::init(tiny_config(), rng);
    ForwardTrace trace = lm_forward({1, 4, 9}, w, false);
    REQUIRE(trace.logits.shape() == std::vector<std::size_t>{3, 11});
    Tensor probs = softmax_lastdim(trace.logits);
    for (std::size_t t = 0; t < 3; ++t) {
        double sum = 0.0;
        for (std::size_t v = 0; v < 11; ++v) sum += probs.at(t, v);
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("shared prefixes give bitwise-identical logits") {
    WideMode wide;
    Rng rng(5);
    ModelWeights w = ModelWeights::init(tiny_config(), rng);
    ForwardTrace a = lm_forward({3, 5, 7, 2}, w, false);
    ForwardTrace b = lm_forward({3, 5, 7, 9, 1, 4}, w, false);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t v = 0; v < 11; ++v) {
            const double x = a.logits.at(t, v);
            const double y = b.logits.at(t, v);
            CHECK(std::memcmp(&x, &y, sizeof(double)) == 0);
        }
}

TEST_CASE("model-level causality: flipping token j leaves earlier logits bitwise unchanged") {
    WideMode wide;
    Rng rng(17);
    ModelConfig cfg = tiny_config();
    ModelWeights w = ModelWeights::init(cfg, rng);
    std::vector<std::int32_t> tokens = {1, 6, 3, 8, 2, 10, 4, 5};
    ForwardTrace base = lm_forward(tokens, w, false);
    for (std::size_t j = 1; j < tokens.size(); ++j) {
        auto flipped = tokens;
        flipped[j] = static_cast<std::int32_t>((flipped[j] + 3) % 11);
        ForwardTrace out = lm_forward(flipped, w, false);
        for (std::size_t t = 0; t < j; ++t)
            for (std::size_t v = 0; v < 11; ++v) {
                const double x = base.logits.at(t, v);
                const double y = out.logits.at(t, v);
                CHECK(std::memcmp(&x, &y, sizeof(double)) == 0);
            }
    }
}

TEST_CASE("fixed-seed one-layer model matches the composed reference at 1e-8") {
    WideMode wide;
    Rng rng(29);
    ModelConfig cfg = tiny_config();
    ModelWeights w = ModelWeights::init(cfg, rng, 0.5);
    const std::vector<std::int32_t> tokens = {4, 0, 10};

    ForwardTrace trace = lm_forward(tokens, w, false);

    ref::LmParams lm;
    lm.token_embedding = w.token_embedding.values();
    lm.positional_table = w.positional_table.values();
    lm.layers.push_back(mirror(w.layers[0]));
    ref::BlockConfig bc{cfg.d_model, cfg.n_heads, cfg.d_model / cfg.n_heads, cfg.gate_dim,
                        cfg.chunk_factor};
    ref::Vec expected = ref::lm_logits({4, 0, 10}, lm, bc, cfg.vocab_size);

    for (std::size_t i = 0; i < expected.size(); ++i)
        CHECK(std::abs(trace.logits.values()[i] - expected[i]) < 1e-8);
}

TEST_CASE("lm_loss closed forms and oracle") {
    WideMode wide;
    ForwardTrace trace;

    SUBCASE("uniform logits give ln V") {
        trace.logits = Tensor::zeros({3, 4});
        Tensor loss = lm_loss(trace, {0, 1, 2}, {});
        CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
    SUBCASE("saturated logits give near-zero loss") {
        trace.logits = Tensor::zeros({2, 4});
        trace.logits.values()[0 * 4 + 1] = 50.0;
        trace.logits.values()[1 * 4 + 3] = 50.0;
        Tensor loss = lm_loss(trace, {1, 3}, {});
        CHECK(loss.item() <= 1e-6);
    }
    SUBCASE("random logits match the independent cross-entropy oracle at 1e-10") {
        Rng rng(404);
        Tensor logits = Tensor::randn({5, 7}, rng, 2.0);
        trace.logits = logits;
        const std::vector<std::int32_t> targets = {6, 0, 3, 3, 1};
        Tensor loss = lm_loss(trace, targets, {});
        const double expected =
            ref::cross_entropy(logits.values(), 5, 7, {6, 0, 3, 3, 1});
        CHECK(std::abs(loss.item() - expected) < 1e-10);
    }
    SUBCASE("all-pad positions are rejected") {
        trace.logits = Tensor::zeros({2, 4});
        CHECK_THROWS_AS(lm_loss(trace, {0, 1}, {true, true}), Error);
    }
}

TEST_CASE("sequence and id validation") {
    WideMode wide;
    Rng rng(7);
    ModelWeights w = ModelWeights::init(tiny_config(), rng);
    CHECK_THROWS_WITH_AS(lm_forward({1, 2, 3, 4, 5, 6, 7, 8, 9}, w, false),
                         doctest::Contains("max_seq_len"), Error);
    CHECK_THROWS_WITH_AS(lm_forward({1, 11}, w, false), doctest::Contains("11"), Error);
}

TEST_CASE("weight tying: an embedding row feeds both input and output sides") {
    WideMode wide;
    Rng rng(19);
    ModelWeights w = ModelWeights::init(tiny_config(), rng);
    const std::vector<std::int32_t> tokens = {6, 2};
    ForwardTrace before = lm_forward(tokens, w, false);

    for (std::size_t j = 0; j < w.config.d_model; ++j)
        w.token_embedding.values()[6 * w.config.d_model + j] += 0.5;
    ForwardTrace after = lm_forward(tokens, w, false);

    // Output side: the logit column for token 6 moves at the position whose
    // input did not change (position 1 reads token 2).
    CHECK(before.logits.at(1, 6) != after.logits.at(1, 6));
    // Input side: position 0 consumed token 6, so its other logits move too.
    bool any_other_changed = false;
    for (std::size_t v = 0; v < 11; ++v)
        if (v != 6 && before.logits.at(0, v) != after.logits.at(0, v)) any_other_changed = true;
    CHECK(any_other_changed);
}

TEST_CASE("full tiny-model gradient check passes at 1e-4") {
    WideMode wide;
    Rng rng(23);
    ModelWeights w = ModelWeights::init(tiny_config(), rng, 0.4);
    const std::vector<std::int32_t> tokens = {3, 7, 1, 9};
    const std::vector<std::int32_t> targets = {7, 1, 9, 2};

    std::vector<Tensor> params;
    w.for_each_param([&](const std::string&, Tensor& t) { params.push_back(t); });
    const double err = grad_check_params(
        [&] {
            ForwardTrace trace = lm_forward(tokens, w, false);
            return lm_loss(trace, targets, {});
        },
        params);
    CHECK(err <= 1e-4);
}

TEST_CASE("checkpoint round-trip in narrow mode is bitwise on logits") {
    set_precision(Precision::narrow);
    Rng rng(37);
    ModelWeights w = ModelWeights::init(tiny_config(), rng);
    const std::vector<std::int32_t> tokens = {1, 5, 9, 2};
    ForwardTrace before = lm_forward(tokens, w, false);

    const std::string path = temp_path("roundtrip.otlm");
    std::vector<std::string> vocab = {"alpha", "beta"};
    save_checkpoint(w, path, &vocab, false);
    Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.vocab_tokens == vocab);

    ForwardTrace after = lm_forward(tokens, loaded.weights, false);
    REQUIRE(before.logits.numel() == after.logits.numel());
    CHECK(std::memcmp(before.logits.values().data(), after.logits.values().data(),
                      before.logits.numel() * sizeof(double)) == 0);
    fs::remove(path);
    set_precision(Precision::wide);
}

TEST_CASE("checkpoint written in wide mode loads within 1e-6 after narrowing") {
    WideMode wide;
    Rng rng(41);
    ModelWeights w = ModelWeights::init(tiny_config(), rng);
    const std::string path = temp_path("narrowing.otlm");
    save_checkpoint(w, path);
    Checkpoint loaded = load_checkpoint(path);

    std::size_t i = 0;
    loaded.weights.for_each_param([&](const std::string& name, Tensor& t) {
        (void)i;
        Tensor* orig = nullptr;
        w.for_each_param([&](const std::string& n2, Tensor& t2) {
            if (n2 == name) orig = &t2;
        });
        REQUIRE(orig != nullptr);
        for (std::size_t j = 0; j < t.numel(); ++j) {
            CHECK(std::abs(t.values()[j] - orig->values()[j]) < 1e-6);
            CHECK(t.values()[j] ==
                  static_cast<double>(static_cast<float>(orig->values()[j])));
        }
    });
    fs::remove(path);
}

TEST_CASE("corrupt magic and truncation are rejected") {
    WideMode wide;
    Rng rng(43);
    ModelWeights w = ModelWeights::init(tiny_config(), rng);
    const std::string path = temp_path("corrupt.otlm");
    save_checkpoint(w, path);

    SUBCASE("magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
        f.close();
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), Error);
    }
    SUBCASE("version") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const char bytes[4] = {9, 0, 0, 0};
        f.write(bytes, 4);
        f.close();
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), Error);
    }
    SUBCASE("truncation") {
        const auto size = fs::file_size(path);
        fs::resize_file(path, size / 2);
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"), Error);
    }
    fs::remove(path);
}

TEST_CASE("dimension mismatch against the embedded config is rejected") {
    WideMode wide;
    Rng rng(47);
    ModelWeights w = ModelWeights::init(tiny_config(), rng);
    const std::string path = temp_path("dims.otlm");
    save_checkpoint(w, path);

    // Rewrite vocab_size=11 -> vocab_size=19 inside the embedded config text
    // (same byte length), so tensor dims no longer match the config.
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const std::string needle = "vocab_size=11";
    const auto at = bytes.find(needle);
    REQUIRE(at != std::string::npos);
    bytes.replace(at, needle.size(), "vocab_size=19");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();

    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("dim"), Error);
    fs::remove(path);
}

} // TEST_SUITE
