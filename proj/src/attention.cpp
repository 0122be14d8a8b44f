#include "otlm/attention.hpp"

#include <cmath>

namespace otlm {

namespace {

constexpr double kMaskConstant = -1e9;

// Strict upper triangle marks future positions.
Tensor causal_mask(std::size_t t_len) {
    Tensor m = Tensor::zeros({t_len, t_len});
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t j = t + 1; j < t_len; ++j) m.values()[t * t_len + j] = 1.0;
    return m;
}

Tensor one_minus(const Tensor& x) {
    return add(scale(x, -1.0), Tensor::full({x.shape().back()}, 1.0));
}

// Repeat each gate coordinate chunk_factor times: [T, D_g] -> [T, D_g*C].
Tensor expand_gate(const Tensor& gate, std::size_t chunk_factor) {
    if (chunk_factor == 1) return gate;
    const std::size_t d_g = gate.shape().back();
    std::vector<Tensor> pieces;
    pieces.reserve(d_g * chunk_factor);
    for (std::size_t k = 0; k < d_g; ++k) {
        Tensor s = slice_lastdim(gate, k, 1);
        for (std::size_t c = 0; c < chunk_factor; ++c) pieces.push_back(s);
    }
    return concat_lastdim(pieces);
}

// Per-head monotone gates for all positions. kind_input selects
// 1 - cumax(...) (input gate) vs cumax(...) (forget gate). cumsum rounding
// can push cumax a few ulp past 1; the relu compositions pin both gates
// into [0,1] exactly without touching in-range values.
std::vector<Tensor> gates_all_positions(const Tensor& h, const Tensor& w, const Tensor& b,
                                        const AttentionConfig& cfg, bool kind_input) {
    Tensor pre = add(matmul(h, w), b); // [T, n_heads*gate_dim]
    std::vector<Tensor> per_head;
    per_head.reserve(cfg.n_heads);
    for (std::size_t head = 0; head < cfg.n_heads; ++head) {
        Tensor z = slice_lastdim(pre, head * cfg.gate_dim, cfg.gate_dim);
        Tensor g = cumax(z);
        per_head.push_back(kind_input ? relu(one_minus(g)) : one_minus(relu(one_minus(g))));
    }
    return per_head;
}

Tensor stack_heads_detached(const std::vector<Tensor>& per_head, std::size_t t_len,
                            std::size_t n_heads, std::size_t gate_dim) {
    Tensor out = Tensor::zeros({t_len, n_heads, gate_dim});
    for (std::size_t head = 0; head < n_heads; ++head)
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t k = 0; k < gate_dim; ++k)
                out.values()[(t * n_heads + head) * gate_dim + k] =
                    per_head[head].values()[t * gate_dim + k];
    return out;
}

} // namespace

void AttentionConfig::validate() const {
    if (d_model == 0 || n_heads == 0 || d_head == 0 || gate_dim == 0 || chunk_factor == 0)
        fail("attention config: all dimensions must be positive");
    if (n_heads * d_head != d_model)
        fail("attention config: n_heads*d_head = " + std::to_string(n_heads * d_head) +
             " != d_model = " + std::to_string(d_model));
    if (gate_dim * chunk_factor != d_head)
        fail("attention config: gate_dim*chunk_factor = " + std::to_string(gate_dim * chunk_factor) +
             " != d_head = " + std::to_string(d_head));
}

LayerParams LayerParams::init(const AttentionConfig& cfg, Rng& rng, double stddev) {
    const std::size_t d = cfg.d_model;
    const std::size_t g = cfg.n_heads * cfg.gate_dim;
    const std::size_t ff = 4 * d;
    LayerParams p;
    p.w_q = Tensor::randn({d, d}, rng, stddev, true);
    p.w_k = Tensor::randn({d, d}, rng, stddev, true);
    p.w_v = Tensor::randn({d, d}, rng, stddev, true);
    p.w_o = Tensor::randn({d, d}, rng, stddev, true);
    p.w_i = Tensor::randn({d, g}, rng, stddev, true);
    p.b_i = Tensor::zeros({g}, true);
    p.w_f = Tensor::randn({d, g}, rng, stddev, true);
    p.b_f = Tensor::zeros({g}, true);
    p.ff_w1 = Tensor::randn({d, ff}, rng, stddev, true);
    p.ff_b1 = Tensor::zeros({ff}, true);
    p.ff_w2 = Tensor::randn({ff, d}, rng, stddev, true);
    p.ff_b2 = Tensor::zeros({d}, true);
    p.ln1_gamma = Tensor::full({d}, 1.0, true);
    p.ln1_beta = Tensor::zeros({d}, true);
    p.ln2_gamma = Tensor::full({d}, 1.0, true);
    p.ln2_beta = Tensor::zeros({d}, true);
    return p;
}

void LayerParams::for_each_param(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("w_q", w_q);
    fn("w_k", w_k);
    fn("w_v", w_v);
    fn("w_o", w_o);
    fn("w_i", w_i);
    fn("b_i", b_i);
    fn("w_f", w_f);
    fn("b_f", b_f);
    fn("ff_w1", ff_w1);
    fn("ff_b1", ff_b1);
    fn("ff_w2", ff_w2);
    fn("ff_b2", ff_b2);
    fn("ln1_gamma", ln1_gamma);
    fn("ln1_beta", ln1_beta);
    fn("ln2_gamma", ln2_gamma);
    fn("ln2_beta", ln2_beta);
}

Tensor causal_weights(const Tensor& q, const Tensor& k) {
    if (!q.defined() || !k.defined() || q.rank() != 2 || k.rank() != 2)
        fail("causal_weights: q and k must be rank-2 [T, d_head]");
    if (q.shape() != k.shape())
        fail("causal_weights: q " + shape_str(q.shape()) + " vs k " + shape_str(k.shape()));
    const std::size_t t_len = q.dim(0);
    if (t_len == 0) fail("causal_weights: empty sequence");
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
    Tensor scores = scale(matmul(q, transpose_last_two(k)), inv_sqrt);
    Tensor masked = mask_fill(scores, causal_mask(t_len), kMaskConstant);
    return softmax_lastdim(masked);
}

Tensor input_gate(const Tensor& h, const LayerParams& params, const AttentionConfig& cfg) {
    cfg.validate();
    Tensor row = Tensor::from({1, cfg.d_model}, h.values());
    auto per_head = gates_all_positions(row, params.w_i, params.b_i, cfg, true);
    return Tensor::from({cfg.n_heads, cfg.gate_dim},
                        stack_heads_detached(per_head, 1, cfg.n_heads, cfg.gate_dim).values());
}

Tensor forget_gate(const Tensor& h, const LayerParams& params, const AttentionConfig& cfg) {
    cfg.validate();
    Tensor row = Tensor::from({1, cfg.d_model}, h.values());
    auto per_head = gates_all_positions(row, params.w_f, params.b_f, cfg, false);
    return Tensor::from({cfg.n_heads, cfg.gate_dim},
                        stack_heads_detached(per_head, 1, cfg.n_heads, cfg.gate_dim).values());
}

AttentionOutput ordered_attention_forward(const Tensor& h, const LayerParams& params,
                                          const AttentionConfig& cfg, GateOverride override_gates,
                                          const DropoutMasks* dropout) {
    cfg.validate();
    if (!h.defined() || h.rank() != 2 || h.dim(1) != cfg.d_model)
        fail("ordered_attention_forward: input must be [T," + std::to_string(cfg.d_model) + "], got " +
             (h.defined() ? shape_str(h.shape()) : std::string("undefined")));
    const std::size_t t_len = h.dim(0);

    Tensor q_all = matmul(h, params.w_q);
    Tensor k_all = matmul(h, params.w_k);
    Tensor v_all = matmul(h, params.w_v);

    std::vector<Tensor> input_gates, forget_gates;
    if (override_gates == GateOverride::all_ones) {
        for (std::size_t head = 0; head < cfg.n_heads; ++head) {
            input_gates.push_back(Tensor::full({t_len, cfg.gate_dim}, 1.0));
            forget_gates.push_back(Tensor::full({t_len, cfg.gate_dim}, 1.0));
        }
    } else {
        input_gates = gates_all_positions(h, params.w_i, params.b_i, cfg, true);
        forget_gates = gates_all_positions(h, params.w_f, params.b_f, cfg, false);
    }

    std::vector<Tensor> head_outputs;
    std::vector<Tensor> attn_per_head;
    head_outputs.reserve(cfg.n_heads);
    for (std::size_t head = 0; head < cfg.n_heads; ++head) {
        const std::size_t off = head * cfg.d_head;
        Tensor q = slice_lastdim(q_all, off, cfg.d_head);
        Tensor k = slice_lastdim(k_all, off, cfg.d_head);
        Tensor v = slice_lastdim(v_all, off, cfg.d_head);

        Tensor a = causal_weights(q, k);
        attn_per_head.push_back(a);

        Tensor gated_values = mul(expand_gate(input_gates[head], cfg.chunk_factor), v);
        Tensor context = matmul(a, gated_values);
        Tensor kept = mul(expand_gate(forget_gates[head], cfg.chunk_factor), context);
        head_outputs.push_back(kept);
    }

    Tensor attn_out = matmul(concat_lastdim(head_outputs), params.w_o);
    if (dropout && dropout->attn.defined()) attn_out = mul(attn_out, dropout->attn);
    Tensor x1 = layer_norm(add(h, attn_out), params.ln1_gamma, params.ln1_beta);

    Tensor hidden = relu(add(matmul(x1, params.ff_w1), params.ff_b1));
    Tensor ff_out = add(matmul(hidden, params.ff_w2), params.ff_b2);
    if (dropout && dropout->ff.defined()) ff_out = mul(ff_out, dropout->ff);
    Tensor out = layer_norm(add(x1, ff_out), params.ln2_gamma, params.ln2_beta);

    AttentionOutput result;
    result.out = out;
    result.gates.input_gates = stack_heads_detached(input_gates, t_len, cfg.n_heads, cfg.gate_dim);
    result.gates.forget_gates = stack_heads_detached(forget_gates, t_len, cfg.n_heads, cfg.gate_dim);
    result.gates.attn_weights = Tensor::zeros({cfg.n_heads, t_len, t_len});
    for (std::size_t head = 0; head < cfg.n_heads; ++head)
        for (std::size_t i = 0; i < t_len * t_len; ++i)
            result.gates.attn_weights.values()[head * t_len * t_len + i] =
                attn_per_head[head].values()[i];
    return result;
}

} // namespace otlm
