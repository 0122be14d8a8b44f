#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "otlm/tensor.hpp"

namespace otlm {

// Causal self-attention with ordered (monotone cumax) gates: value vectors
// are scaled by a non-increasing input gate before the attention-weighted
// sum, and a non-decreasing forget gate attenuates low gate positions of the
// aggregated context. Low gate indices carry short-timescale content, high
// indices long-timescale content.

struct AttentionConfig {
    std::size_t d_model = 0;
    std::size_t n_heads = 0;
    std::size_t d_head = 0;       // d_model / n_heads
    std::size_t gate_dim = 0;     // D_g
    std::size_t chunk_factor = 0; // C, with gate_dim * C == d_head

    void validate() const;
};

// Captured per-position gate values and attention weights from one layer's
// forward pass. input_gates/forget_gates: [T, n_heads, gate_dim] (pre
// chunk-expansion); attn_weights: [n_heads, T, T], rows sum to 1 over j <= t
// and are exactly 0 for j > t.
struct GateActivations {
    Tensor input_gates;
    Tensor forget_gates;
    Tensor attn_weights;
};

struct LayerParams {
    Tensor w_q, w_k, w_v, w_o; // [d_model, d_model]
    Tensor w_i, b_i;           // [d_model, n_heads*gate_dim], [n_heads*gate_dim]
    Tensor w_f, b_f;
    Tensor ff_w1, ff_b1;       // [d_model, 4*d_model], [4*d_model]
    Tensor ff_w2, ff_b2;       // [4*d_model, d_model], [d_model]
    Tensor ln1_gamma, ln1_beta; // [d_model]
    Tensor ln2_gamma, ln2_beta;

    // Weight matrices ~ N(0, stddev^2); biases zero; layer-norm scale 1.
    static LayerParams init(const AttentionConfig& cfg, Rng& rng, double stddev);

    // Fixed enumeration order (also the checkpoint tensor order).
    void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);
};

// Test hook: the input gate cannot reach all-ones through its cumax
// parameterization (its last entry is structurally 0), so the ungated
// reduction is exercised by overriding both gates with constant ones.
enum class GateOverride { none, all_ones };

// a[t][j] = softmax_j(q_t . k_j / sqrt(d_head)) over j <= t; zero above the
// diagonal. q, k: [T, d_head].
Tensor causal_weights(const Tensor& q, const Tensor& k);

// 1 - cumax(W_i h + b_i) per head: non-increasing along gate_dim, in [0,1].
// h: [d_model]; result [n_heads, gate_dim] (value-level; gradients flow
// through the batched path inside ordered_attention_forward).
Tensor input_gate(const Tensor& h, const LayerParams& params, const AttentionConfig& cfg);

// cumax(W_f h + b_f) per head: non-decreasing along gate_dim, last entry 1
// within precision tolerance. Low indices are the ones attenuated toward 0.
Tensor forget_gate(const Tensor& h, const LayerParams& params, const AttentionConfig& cfg);

struct AttentionOutput {
    Tensor out;            // [T, d_model]
    GateActivations gates; // detached captures
};

// Optional per-sublayer dropout masks (entries 0 or 1/keep), shape
// [T, d_model] each; applied to the sublayer outputs before the residual add.
struct DropoutMasks {
    Tensor attn;
    Tensor ff;
};

// Full block: per head c_t = sum_{j<=t} a[t][j] * (expand(i_j) . v_j),
// g_t = expand(f_t) . c_t, heads concatenated, W_o projection, residual +
// layer norm, position-wise feed-forward, residual + layer norm. expand
// repeats each gate coordinate chunk_factor times to width d_head.
AttentionOutput ordered_attention_forward(const Tensor& h, const LayerParams& params,
                                          const AttentionConfig& cfg,
                                          GateOverride override_gates = GateOverride::none,
                                          const DropoutMasks* dropout = nullptr);

} // namespace otlm
