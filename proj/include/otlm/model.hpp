#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "otlm/attention.hpp"
#include "otlm/config.hpp"
#include "otlm/tensor.hpp"

namespace otlm {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t gate_dim = 16;
    std::size_t chunk_factor = 0; // 0 = derive as d_head / gate_dim
    std::size_t max_seq_len = 64;
    double dropout_rate = 0.0;

    AttentionConfig attention() const;
    void validate() const; // resolves chunk_factor, checks all invariants

    KvMap to_kv() const;
    static ModelConfig from_kv(const KvMap& kv);
    static const std::vector<std::string>& keys();
};

// Token embedding doubles as the output head (weight tying): logits are
// h . token_embedding^T, so the head has no tensor of its own.
struct ModelWeights {
    ModelConfig config;
    Tensor token_embedding;  // [vocab_size, d_model]
    Tensor positional_table; // [max_seq_len, d_model]
    std::vector<LayerParams> layers;

    static ModelWeights init(const ModelConfig& cfg, Rng& rng, double stddev = 0.05);

    // Fixed order: token_embedding, positional_table, then layers.<i>.<name>.
    void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);
};

struct ForwardTrace {
    std::vector<GateActivations> per_layer; // empty unless gates captured
    Tensor logits;                          // [T, vocab_size]
};

// Embedding + positions through n_layers ordered-attention blocks, causal
// throughout; logits[t] scores token t+1. dropout_rng non-null enables
// dropout at config.dropout_rate (training only).
ForwardTrace lm_forward(const std::vector<std::int32_t>& tokens, ModelWeights& weights,
                        bool capture_gates, Rng* dropout_rng = nullptr);

// Mean over non-pad positions of -log softmax(logits[t])[targets[t]].
Tensor lm_loss(const ForwardTrace& trace, const std::vector<std::int32_t>& targets,
               const std::vector<bool>& pad_mask);

// ---------------------------------------------------------------------------
// Checkpoints: magic "OTLM" | u32 LE version | length-prefixed canonical
// key=value config | u32 LE tensor count | per tensor: length-prefixed name,
// u32 LE rank, u32 LE dims, raw float32 LE values row-major.
// ---------------------------------------------------------------------------

constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelWeights weights;
    std::vector<std::string> vocab_tokens; // non-reserved tokens in id order (id 3 first)
    bool vocab_lowercase = false;
};

void save_checkpoint(ModelWeights& weights, const std::string& path,
                     const std::vector<std::string>* vocab_tokens = nullptr,
                     bool vocab_lowercase = false);
Checkpoint load_checkpoint(const std::string& path);

} // namespace otlm
