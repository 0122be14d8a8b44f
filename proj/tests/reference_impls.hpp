// Independent plain-loop reference implementations used as test oracles.
// These deliberately avoid the library's kernel/tape machinery: everything
// here is scalar arithmetic straight from the definitions.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <utility>
#include <vector>

namespace ref {

using Vec = std::vector<double>;

inline Vec softmax(const Vec& x) {
    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);
    Vec out(x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

inline Vec cumsum(const Vec& x) {
    Vec out(x.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        acc += x[i];
        out[i] = acc;
    }
    return out;
}

inline Vec cumax(const Vec& x) { return cumsum(softmax(x)); }

// C[m,n] = A[m,k] * B[k,n], row-major flats.
inline Vec matmul(const Vec& a, std::size_t m, std::size_t k, const Vec& b, std::size_t n) {
    Vec c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
            c[i * n + j] = acc;
        }
    return c;
}

// Masked attention weights: softmax over j <= t of q_t.k_j/sqrt(d); 0 above.
inline Vec causal_attention_weights(const Vec& q, const Vec& k, std::size_t t_len, std::size_t d) {
    Vec w(t_len * t_len, 0.0);
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t t = 0; t < t_len; ++t) {
        Vec logits(t + 1);
        for (std::size_t j = 0; j <= t; ++j) {
            double dot = 0.0;
            for (std::size_t x = 0; x < d; ++x) dot += q[t * d + x] * k[j * d + x];
            logits[j] = dot * inv;
        }
        Vec sm = softmax(logits);
        for (std::size_t j = 0; j <= t; ++j) w[t * t_len + j] = sm[j];
    }
    return w;
}

inline Vec layer_norm(const Vec& x, std::size_t rows, std::size_t d, const Vec& gamma,
                      const Vec& beta, double eps = 1e-5) {
    Vec out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x[r * d + j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (x[r * d + j] - mu) * (x[r * d + j] - mu);
        var /= static_cast<double>(d);
        const double inv_sigma = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j)
            out[r * d + j] = gamma[j] * (x[r * d + j] - mu) * inv_sigma + beta[j];
    }
    return out;
}

// Plain-value mirror of one ordered-attention block.
struct BlockParams {
    Vec w_q, w_k, w_v, w_o; // [d, d]
    Vec w_i, b_i, w_f, b_f; // [d, H*Dg], [H*Dg]
    Vec ff_w1, ff_b1;       // [d, 4d], [4d]
    Vec ff_w2, ff_b2;       // [4d, d], [d]
    Vec ln1_g, ln1_b, ln2_g, ln2_b;
};

struct BlockConfig {
    std::size_t d_model, n_heads, d_head, gate_dim, chunk_factor;
};

// force_unit_gates replaces both gates with 1 everywhere (the standard
// ungated transformer block).
inline Vec ordered_block(const Vec& h, std::size_t t_len, const BlockParams& p,
                         const BlockConfig& cfg, bool force_unit_gates) {
    const std::size_t d = cfg.d_model;
    const std::size_t hg = cfg.n_heads * cfg.gate_dim;

    Vec q_all = matmul(h, t_len, d, p.w_q, d);
    Vec k_all = matmul(h, t_len, d, p.w_k, d);
    Vec v_all = matmul(h, t_len, d, p.w_v, d);

    Vec ig_pre = matmul(h, t_len, d, p.w_i, hg);
    Vec fg_pre = matmul(h, t_len, d, p.w_f, hg);
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t j = 0; j < hg; ++j) {
            ig_pre[t * hg + j] += p.b_i[j];
            fg_pre[t * hg + j] += p.b_f[j];
        }

    Vec merged(t_len * d, 0.0);
    for (std::size_t head = 0; head < cfg.n_heads; ++head) {
        const std::size_t off = head * cfg.d_head;
        Vec q(t_len * cfg.d_head), k(t_len * cfg.d_head), v(t_len * cfg.d_head);
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t x = 0; x < cfg.d_head; ++x) {
                q[t * cfg.d_head + x] = q_all[t * d + off + x];
                k[t * cfg.d_head + x] = k_all[t * d + off + x];
                v[t * cfg.d_head + x] = v_all[t * d + off + x];
            }
        Vec a = causal_attention_weights(q, k, t_len, cfg.d_head);

        // Per-position gates for this head.
        Vec ig(t_len * cfg.gate_dim, 1.0), fg(t_len * cfg.gate_dim, 1.0);
        if (!force_unit_gates) {
            for (std::size_t t = 0; t < t_len; ++t) {
                Vec zi(cfg.gate_dim), zf(cfg.gate_dim);
                for (std::size_t g = 0; g < cfg.gate_dim; ++g) {
                    zi[g] = ig_pre[t * hg + head * cfg.gate_dim + g];
                    zf[g] = fg_pre[t * hg + head * cfg.gate_dim + g];
                }
                Vec ci = cumax(zi), cf = cumax(zf);
                for (std::size_t g = 0; g < cfg.gate_dim; ++g) {
                    ig[t * cfg.gate_dim + g] = 1.0 - ci[g];
                    fg[t * cfg.gate_dim + g] = cf[g];
                }
            }
        }

        // c_t = sum_j a[t][j] * (expand(i_j) . v_j); g_t = expand(f_t) . c_t
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t x = 0; x < cfg.d_head; ++x) {
                const std::size_t gate_idx = x / cfg.chunk_factor;
                double acc = 0.0;
                for (std::size_t j = 0; j <= t; ++j)
                    acc += a[t * t_len + j] * ig[j * cfg.gate_dim + gate_idx] * v[j * cfg.d_head + x];
                merged[t * d + off + x] = fg[t * cfg.gate_dim + gate_idx] * acc;
            }
    }

    Vec attn_out = matmul(merged, t_len, d, p.w_o, d);
    Vec res1(t_len * d);
    for (std::size_t i = 0; i < res1.size(); ++i) res1[i] = h[i] + attn_out[i];
    Vec x1 = layer_norm(res1, t_len, d, p.ln1_g, p.ln1_b);

    const std::size_t ff = 4 * d;
    Vec hidden = matmul(x1, t_len, d, p.ff_w1, ff);
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t j = 0; j < ff; ++j) {
            hidden[t * ff + j] += p.ff_b1[j];
            hidden[t * ff + j] = std::max(0.0, hidden[t * ff + j]);
        }
    Vec ff_out = matmul(hidden, t_len, ff, p.ff_w2, d);
    Vec res2(t_len * d);
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t j = 0; j < d; ++j)
            res2[t * d + j] = x1[t * d + j] + ff_out[t * d + j] + p.ff_b2[j];
    return layer_norm(res2, t_len, d, p.ln2_g, p.ln2_b);
}

// Full tiny language model: embeddings + positions, blocks, tied head.
struct LmParams {
    Vec token_embedding;    // [V, d]
    Vec positional_table;   // [max_len, d]
    std::vector<BlockParams> layers;
};

inline Vec lm_logits(const std::vector<int>& tokens, const LmParams& lm, const BlockConfig& cfg,
                     std::size_t vocab) {
    const std::size_t t_len = tokens.size(), d = cfg.d_model;
    Vec h(t_len * d);
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t j = 0; j < d; ++j)
            h[t * d + j] = lm.token_embedding[static_cast<std::size_t>(tokens[t]) * d + j] +
                           lm.positional_table[t * d + j];
    for (const auto& layer : lm.layers) h = ordered_block(h, t_len, layer, cfg, false);

    Vec logits(t_len * vocab, 0.0);
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t w = 0; w < vocab; ++w) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += h[t * d + j] * lm.token_embedding[w * d + j];
            logits[t * vocab + w] = acc;
        }
    return logits;
}

inline double cross_entropy(const Vec& logits, std::size_t t_len, std::size_t vocab,
                            const std::vector<int>& targets) {
    double total = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
        double mx = logits[t * vocab];
        for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, logits[t * vocab + j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) sum += std::exp(logits[t * vocab + j] - mx);
        total += mx + std::log(sum) - logits[t * vocab + static_cast<std::size_t>(targets[t])];
    }
    return total / static_cast<double>(t_len);
}

// Brute-force greedy split spans, written as an explicit work-list rather
// than the library's recursion. Returns every internal-node span.
inline std::set<std::pair<std::size_t, std::size_t>> greedy_spans(std::size_t n_words,
                                                                  const Vec& d) {
    std::set<std::pair<std::size_t, std::size_t>> spans;
    std::vector<std::pair<std::size_t, std::size_t>> work{{0, n_words - 1}};
    while (!work.empty()) {
        const auto [l, r] = work.back();
        work.pop_back();
        if (l >= r) continue;
        spans.insert({l, r});
        // Boundary before word s has score d[s-1]; leftmost argmax over (l, r].
        const auto first = d.begin() + static_cast<std::ptrdiff_t>(l);
        const auto last = d.begin() + static_cast<std::ptrdiff_t>(r);
        const auto it = std::max_element(first, last);
        const std::size_t split = static_cast<std::size_t>(it - d.begin()) + 1;
        work.push_back({l, split - 1});
        work.push_back({split, r});
    }
    return spans;
}

} // namespace ref
