#include "otlm/gradcheck.hpp"

#include <iomanip>

#include "otlm/model.hpp"
#include "otlm/tensor.hpp"

namespace otlm {

namespace {

constexpr double kLimit = 1e-4;
constexpr double kEps = 1e-5;

// Scalar projection of op(x) against fixed random weights, so every output
// coordinate contributes a distinct gradient.
Tensor weighted_sum(const Tensor& t, const Tensor& w) {
    Tensor prod = mul(t, w);
    Tensor s = prod;
    while (s.rank() > 0) s = sum_lastdim(s);
    return s;
}

struct Suite {
    std::vector<GradCheckResult> results;
    Rng rng{20240601};

    Tensor rand_tensor(std::vector<std::size_t> shape, double stddev = 1.0) {
        return Tensor::randn(std::move(shape), rng, stddev);
    }

    void check(const std::string& name, const std::function<Tensor(const Tensor&)>& f,
               const Tensor& point, double limit = kLimit) {
        results.push_back({name, grad_check(f, point, kEps), limit});
    }

    void run_kernels() {
        const std::size_t points = 10;
        for (std::size_t p = 0; p < points; ++p) {
            const std::string tag = "#" + std::to_string(p);

            Tensor b = rand_tensor({3, 2});
            Tensor wmm = rand_tensor({4, 2});
            check("matmul(lhs)" + tag,
                  [&](const Tensor& x) { return weighted_sum(matmul(x, b), wmm); }, rand_tensor({4, 3}));
            Tensor a = rand_tensor({4, 3});
            check("matmul(rhs)" + tag,
                  [&](const Tensor& x) { return weighted_sum(matmul(a, x), wmm); }, rand_tensor({3, 2}));

            Tensor other = rand_tensor({3, 5});
            Tensor w35 = rand_tensor({3, 5});
            check("add(lhs)" + tag, [&](const Tensor& x) { return weighted_sum(add(x, other), w35); },
                  rand_tensor({3, 5}));
            Tensor row = rand_tensor({5});
            check("add(broadcast rhs)" + tag,
                  [&](const Tensor& x) { return weighted_sum(add(other, x), w35); }, row);
            check("mul" + tag, [&](const Tensor& x) { return weighted_sum(mul(x, other), w35); },
                  rand_tensor({3, 5}));
            check("scale" + tag, [&](const Tensor& x) { return weighted_sum(scale(x, -2.5), w35); },
                  rand_tensor({3, 5}));
            check("sigmoid" + tag, [&](const Tensor& x) { return weighted_sum(sigmoid(x), w35); },
                  rand_tensor({3, 5}));
            check("tanh" + tag, [&](const Tensor& x) { return weighted_sum(tanh_elem(x), w35); },
                  rand_tensor({3, 5}));
            // Keep relu probes away from the kink at 0.
            Tensor relu_point = rand_tensor({3, 5});
            for (double& v : relu_point.values())
                if (std::abs(v) < 0.05) v = v < 0 ? v - 0.1 : v + 0.1;
            check("relu" + tag, [&](const Tensor& x) { return weighted_sum(relu(x), w35); }, relu_point);
            check("softmax_lastdim" + tag,
                  [&](const Tensor& x) { return weighted_sum(softmax_lastdim(x), w35); },
                  rand_tensor({3, 5}));
            check("cumsum_lastdim" + tag,
                  [&](const Tensor& x) { return weighted_sum(cumsum_lastdim(x), w35); },
                  rand_tensor({3, 5}));
            Tensor w3 = rand_tensor({3});
            check("sum_lastdim" + tag,
                  [&](const Tensor& x) { return weighted_sum(sum_lastdim(x), w3); }, rand_tensor({3, 5}));
            check("mean" + tag, [&](const Tensor& x) { return mean_all(x); }, rand_tensor({3, 5}));
            Tensor other_part = rand_tensor({3, 2});
            Tensor w37 = rand_tensor({3, 7});
            check("concat_lastdim" + tag,
                  [&](const Tensor& x) { return weighted_sum(concat_lastdim({x, other_part}), w37); },
                  rand_tensor({3, 5}));
            Tensor w32 = rand_tensor({3, 2});
            check("slice" + tag,
                  [&](const Tensor& x) { return weighted_sum(slice_lastdim(x, 1, 2), w32); },
                  rand_tensor({3, 5}));
            Tensor w53 = rand_tensor({5, 3});
            check("transpose_last_two" + tag,
                  [&](const Tensor& x) { return weighted_sum(transpose_last_two(x), w53); },
                  rand_tensor({3, 5}));
            Tensor mask = Tensor::zeros({3, 5});
            for (std::size_t i = 0; i < mask.numel(); i += 3) mask.values()[i] = 1.0;
            check("mask_fill" + tag,
                  [&](const Tensor& x) { return weighted_sum(mask_fill(x, mask, -7.0), w35); },
                  rand_tensor({3, 5}));
            Tensor gamma = rand_tensor({5});
            Tensor beta = rand_tensor({5});
            check("layer_norm(x)" + tag,
                  [&](const Tensor& x) { return weighted_sum(layer_norm(x, gamma, beta), w35); },
                  rand_tensor({3, 5}));
            Tensor lx = rand_tensor({3, 5});
            check("layer_norm(gamma)" + tag,
                  [&](const Tensor& g) { return weighted_sum(layer_norm(lx, g, beta), w35); },
                  rand_tensor({5}));
            check("layer_norm(beta)" + tag,
                  [&](const Tensor& bta) { return weighted_sum(layer_norm(lx, gamma, bta), w35); },
                  rand_tensor({5}));
            std::vector<std::int32_t> ids = {2, 0, 2, 1};
            Tensor w45 = rand_tensor({4, 5});
            check("embedding_lookup" + tag,
                  [&](const Tensor& x) { return weighted_sum(embedding_lookup(x, ids), w45); },
                  rand_tensor({3, 5}));
            check("reverse_lastdim" + tag,
                  [&](const Tensor& x) { return weighted_sum(reverse_lastdim(x), w35); },
                  rand_tensor({3, 5}));
            Tensor w8 = rand_tensor({8});
            check("cumax" + tag, [&](const Tensor& x) { return weighted_sum(cumax(x), w8); },
                  rand_tensor({8}));
        }
    }

    void run_attention_block() {
        AttentionConfig cfg;
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.d_head = 4;
        cfg.gate_dim = 2;
        cfg.chunk_factor = 2;
        LayerParams layer = LayerParams::init(cfg, rng, 0.4);
        Tensor h = rand_tensor({3, cfg.d_model}, 0.7);

        std::vector<Tensor> params = {h};
        layer.for_each_param([&](const std::string&, Tensor& t) { params.push_back(t); });
        const double err = grad_check_params(
            [&] {
                Tensor out = ordered_attention_forward(h, layer, cfg).out;
                return sum_lastdim(sum_lastdim(out));
            },
            params, kEps);
        results.push_back({"ordered_attention_block", err, kLimit});
    }

    void run_tiny_lm() {
        ModelConfig cfg;
        cfg.vocab_size = 11;
        cfg.d_model = 8;
        cfg.n_layers = 1;
        cfg.n_heads = 2;
        cfg.gate_dim = 2;
        cfg.chunk_factor = 2;
        cfg.max_seq_len = 8;
        ModelWeights weights = ModelWeights::init(cfg, rng, 0.4);

        const std::vector<std::int32_t> tokens = {3, 7, 1, 9};
        const std::vector<std::int32_t> targets = {7, 1, 9, 2};
        const std::vector<bool> pads;

        std::vector<Tensor> params;
        weights.for_each_param([&](const std::string&, Tensor& t) { params.push_back(t); });
        const double err = grad_check_params(
            [&] {
                ForwardTrace trace = lm_forward(tokens, weights, false);
                return lm_loss(trace, targets, pads);
            },
            params, kEps);
        results.push_back({"tiny_lm_loss", err, kLimit});
    }
};

} // namespace

std::vector<GradCheckResult> run_gradcheck_suite() {
    const Precision saved = precision();
    set_precision(Precision::wide);
    Suite suite;
    suite.run_kernels();
    suite.run_attention_block();
    suite.run_tiny_lm();
    set_precision(saved);
    return suite.results;
}

bool report_gradcheck_suite(std::ostream& out) {
    bool all_ok = true;
    for (const auto& r : run_gradcheck_suite()) {
        all_ok = all_ok && r.passed();
        out << "gradcheck " << r.name << ": max_rel_err=" << std::scientific << std::setprecision(3)
            << r.max_rel_error << " limit=" << r.limit << (r.passed() ? " [ok]" : " [FAIL]") << "\n";
    }
    return all_ok;
}

} // namespace otlm
