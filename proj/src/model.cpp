#include "otlm/model.hpp"

#include <algorithm>

namespace otlm {

AttentionConfig ModelConfig::attention() const {
    AttentionConfig a;
    a.d_model = d_model;
    a.n_heads = n_heads;
    a.d_head = n_heads ? d_model / n_heads : 0;
    a.gate_dim = gate_dim;
    a.chunk_factor = chunk_factor ? chunk_factor : (gate_dim ? a.d_head / gate_dim : 0);
    return a;
}

void ModelConfig::validate() const {
    if (vocab_size == 0) fail("model config: vocab_size must be positive");
    if (n_layers == 0) fail("model config: n_layers must be positive");
    if (max_seq_len < 2) fail("model config: max_seq_len must be >= 2");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) fail("model config: dropout_rate must be in [0,1)");
    if (n_heads == 0 || d_model % n_heads != 0)
        fail("model config: d_model = " + std::to_string(d_model) + " not divisible by n_heads = " +
             std::to_string(n_heads));
    attention().validate();
}

KvMap ModelConfig::to_kv() const {
    KvMap kv;
    kv["vocab_size"] = std::to_string(vocab_size);
    kv["d_model"] = std::to_string(d_model);
    kv["n_layers"] = std::to_string(n_layers);
    kv["n_heads"] = std::to_string(n_heads);
    kv["gate_dim"] = std::to_string(gate_dim);
    kv["chunk_factor"] = std::to_string(attention().chunk_factor);
    kv["max_seq_len"] = std::to_string(max_seq_len);
    kv["dropout_rate"] = format_double(dropout_rate);
    return kv;
}

const std::vector<std::string>& ModelConfig::keys() {
    static const std::vector<std::string> k = {"vocab_size", "d_model",     "n_layers",
                                               "n_heads",    "gate_dim",    "chunk_factor",
                                               "max_seq_len", "dropout_rate"};
    return k;
}

ModelConfig ModelConfig::from_kv(const KvMap& kv) {
    ModelConfig cfg;
    cfg.vocab_size = static_cast<std::size_t>(kv_int(kv, "vocab_size", 0));
    cfg.d_model = static_cast<std::size_t>(kv_int(kv, "d_model", 64));
    cfg.n_layers = static_cast<std::size_t>(kv_int(kv, "n_layers", 2));
    cfg.n_heads = static_cast<std::size_t>(kv_int(kv, "n_heads", 4));
    cfg.gate_dim = static_cast<std::size_t>(kv_int(kv, "gate_dim", 16));
    cfg.chunk_factor = static_cast<std::size_t>(kv_int(kv, "chunk_factor", 0));
    cfg.max_seq_len = static_cast<std::size_t>(kv_int(kv, "max_seq_len", 64));
    cfg.dropout_rate = kv_double(kv, "dropout_rate", 0.0);
    return cfg;
}

ModelWeights ModelWeights::init(const ModelConfig& cfg, Rng& rng, double stddev) {
    cfg.validate();
    ModelWeights w;
    w.config = cfg;
    w.config.chunk_factor = cfg.attention().chunk_factor;
    w.token_embedding = Tensor::randn({cfg.vocab_size, cfg.d_model}, rng, stddev, true);
    w.positional_table = Tensor::randn({cfg.max_seq_len, cfg.d_model}, rng, stddev, true);
    w.layers.reserve(cfg.n_layers);
    for (std::size_t i = 0; i < cfg.n_layers; ++i)
        w.layers.push_back(LayerParams::init(cfg.attention(), rng, stddev));
    return w;
}

void ModelWeights::for_each_param(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("token_embedding", token_embedding);
    fn("positional_table", positional_table);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string prefix = "layers." + std::to_string(i) + ".";
        layers[i].for_each_param([&](const std::string& name, Tensor& t) { fn(prefix + name, t); });
    }
}

namespace {

Tensor dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
    const double keep = 1.0 - rate;
    Tensor m = Tensor::zeros({rows, cols});
    for (double& v : m.values()) v = rng_uniform01(rng) < keep ? 1.0 / keep : 0.0;
    return m;
}

} // namespace

ForwardTrace lm_forward(const std::vector<std::int32_t>& tokens, ModelWeights& weights,
                        bool capture_gates, Rng* dropout_rng) {
    const ModelConfig& cfg = weights.config;
    if (tokens.empty()) fail("lm_forward: empty token sequence");
    if (tokens.size() > cfg.max_seq_len)
        fail("lm_forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
             std::to_string(cfg.max_seq_len));
    for (std::int32_t id : tokens)
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
            fail("lm_forward: token id " + std::to_string(id) + " outside vocabulary of size " +
                 std::to_string(cfg.vocab_size));

    const std::size_t t_len = tokens.size();
    std::vector<std::int32_t> positions(t_len);
    for (std::size_t t = 0; t < t_len; ++t) positions[t] = static_cast<std::int32_t>(t);

    Tensor states = add(embedding_lookup(weights.token_embedding, tokens),
                        embedding_lookup(weights.positional_table, positions));

    const bool use_dropout = dropout_rng != nullptr && cfg.dropout_rate > 0.0;
    ForwardTrace trace;
    const AttentionConfig attn_cfg = cfg.attention();
    for (std::size_t layer = 0; layer < cfg.n_layers; ++layer) {
        DropoutMasks masks;
        if (use_dropout) {
            masks.attn = dropout_mask(t_len, cfg.d_model, cfg.dropout_rate, *dropout_rng);
            masks.ff = dropout_mask(t_len, cfg.d_model, cfg.dropout_rate, *dropout_rng);
        }
        AttentionOutput out = ordered_attention_forward(states, weights.layers[layer], attn_cfg,
                                                        GateOverride::none,
                                                        use_dropout ? &masks : nullptr);
        states = out.out;
        if (capture_gates) trace.per_layer.push_back(std::move(out.gates));
    }

    trace.logits = matmul(states, transpose_last_two(weights.token_embedding));
    return trace;
}

Tensor lm_loss(const ForwardTrace& trace, const std::vector<std::int32_t>& targets,
               const std::vector<bool>& pad_mask) {
    if (targets.size() != trace.logits.dim(0))
        fail("lm_loss: " + std::to_string(targets.size()) + " targets vs " +
             std::to_string(trace.logits.dim(0)) + " logit rows");
    return cross_entropy(trace.logits, targets, pad_mask);
}

} // namespace otlm
