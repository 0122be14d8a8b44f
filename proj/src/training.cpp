#include "otlm/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace otlm {

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) fail("train config: learning_rate must be positive");
    if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
        fail("train config: beta1/beta2 must be in (0,1)");
    if (epsilon <= 0.0) fail("train config: epsilon must be positive");
    if (clip_norm <= 0.0) fail("train config: clip_norm must be positive");
    if (batch_size == 0) fail("train config: batch_size must be positive");
    if (checkpoint_every == 0) fail("train config: checkpoint_every must be positive");
}

KvMap TrainConfig::to_kv() const {
    KvMap kv;
    kv["learning_rate"] = format_double(learning_rate);
    kv["beta1"] = format_double(beta1);
    kv["beta2"] = format_double(beta2);
    kv["epsilon"] = format_double(epsilon);
    kv["clip_norm"] = format_double(clip_norm);
    kv["batch_size"] = std::to_string(batch_size);
    kv["max_steps"] = std::to_string(max_steps);
    kv["warmup_steps"] = std::to_string(warmup_steps);
    kv["seed"] = std::to_string(seed);
    kv["checkpoint_every"] = std::to_string(checkpoint_every);
    return kv;
}

const std::vector<std::string>& TrainConfig::keys() {
    static const std::vector<std::string> k = {
        "learning_rate", "beta1", "beta2",        "epsilon", "clip_norm",
        "batch_size",    "max_steps", "warmup_steps", "seed",    "checkpoint_every"};
    return k;
}

TrainConfig TrainConfig::from_kv(const KvMap& kv) {
    TrainConfig cfg;
    cfg.learning_rate = kv_double(kv, "learning_rate", cfg.learning_rate);
    cfg.beta1 = kv_double(kv, "beta1", cfg.beta1);
    cfg.beta2 = kv_double(kv, "beta2", cfg.beta2);
    cfg.epsilon = kv_double(kv, "epsilon", cfg.epsilon);
    cfg.clip_norm = kv_double(kv, "clip_norm", cfg.clip_norm);
    cfg.batch_size = static_cast<std::size_t>(kv_int(kv, "batch_size", static_cast<std::int64_t>(cfg.batch_size)));
    cfg.max_steps = static_cast<std::size_t>(kv_int(kv, "max_steps", static_cast<std::int64_t>(cfg.max_steps)));
    cfg.warmup_steps =
        static_cast<std::size_t>(kv_int(kv, "warmup_steps", static_cast<std::int64_t>(cfg.warmup_steps)));
    cfg.seed = static_cast<std::uint64_t>(kv_int(kv, "seed", static_cast<std::int64_t>(cfg.seed)));
    cfg.checkpoint_every =
        static_cast<std::size_t>(kv_int(kv, "checkpoint_every", static_cast<std::int64_t>(cfg.checkpoint_every)));
    return cfg;
}

std::vector<NamedParam> collect_params(ModelWeights& weights) {
    std::vector<NamedParam> params;
    weights.for_each_param([&](const std::string& name, Tensor& t) { params.push_back({name, t}); });
    return params;
}

OptimizerState OptimizerState::init(const std::vector<NamedParam>& params) {
    OptimizerState state;
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const auto& p : params) {
        state.m.push_back(Tensor::zeros(p.tensor.shape()));
        state.v.push_back(Tensor::zeros(p.tensor.shape()));
    }
    return state;
}

double clip_gradients(std::vector<NamedParam>& params, double clip_norm) {
    if (clip_norm <= 0.0) fail("clip_gradients: clip_norm must be positive");
    double sq = 0.0;
    for (auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm <= clip_norm) return 1.0;
    const double scale = clip_norm / norm;
    for (auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double& g : p.tensor.grad()) g *= scale;
    }
    return scale;
}

void adam_step(std::vector<NamedParam>& params, OptimizerState& state, const TrainConfig& cfg,
               double lr) {
    if (state.m.size() != params.size())
        fail("adam_step: optimizer state has " + std::to_string(state.m.size()) + " slots for " +
             std::to_string(params.size()) + " parameters");
    const Precision mode = precision();
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i].tensor;
        auto& values = p.values();
        auto& m = state.m[i].values();
        auto& v = state.v[i].values();
        const bool has_grad = p.has_grad();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = has_grad ? p.grad()[j] : 0.0;
            if (std::isnan(g))
                fail("adam_step: NaN gradient in parameter \"" + params[i].name + "\"");
            m[j] = round_to_precision(cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g, mode);
            v[j] = round_to_precision(cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g, mode);
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            values[j] = round_to_precision(values[j] - lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon), mode);
        }
    }
}

namespace {

struct Batch {
    std::vector<std::size_t> sentence_indices;
    std::size_t padded_len = 0; // longest sentence (with eos) in the bucket
};

std::vector<Batch> make_buckets(const TokenizedCorpus& corpus, std::size_t batch_size) {
    std::vector<std::size_t> order(corpus.sentences.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return corpus.sentences[a].size() < corpus.sentences[b].size();
    });
    std::vector<Batch> buckets;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        Batch b;
        for (std::size_t j = i; j < std::min(i + batch_size, order.size()); ++j) {
            b.sentence_indices.push_back(order[j]);
            b.padded_len = std::max(b.padded_len, corpus.sentences[order[j]].size());
        }
        buckets.push_back(std::move(b));
    }
    return buckets;
}

// Padded next-word view of one sentence: input seq[:-1], targets seq[1:],
// pads masked.
struct Example {
    std::vector<std::int32_t> input;
    std::vector<std::int32_t> targets;
    std::vector<bool> pad_mask;
    std::size_t live = 0;
};

Example make_example(const std::vector<std::int32_t>& sentence, std::size_t padded_len) {
    Example ex;
    std::vector<std::int32_t> seq = sentence;
    seq.resize(padded_len, Vocab::pad_id);
    ex.input.assign(seq.begin(), seq.end() - 1);
    ex.targets.assign(seq.begin() + 1, seq.end());
    ex.pad_mask.resize(ex.targets.size());
    for (std::size_t t = 0; t < ex.targets.size(); ++t)
        ex.pad_mask[t] = t + 1 >= sentence.size();
    ex.live = sentence.size() - 1;
    return ex;
}

} // namespace

std::string train(const TokenizedCorpus& corpus, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    train_cfg.validate();
    if (corpus.sentences.empty()) fail("train: corpus is empty");

    ModelConfig cfg = model_cfg;
    if (cfg.vocab_size == 0) cfg.vocab_size = corpus.vocab.size();
    if (cfg.vocab_size != corpus.vocab.size())
        fail("train: config vocab_size " + std::to_string(cfg.vocab_size) +
             " does not match corpus vocabulary " + std::to_string(corpus.vocab.size()));
    cfg.validate();
    for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
        if (corpus.sentences[i].size() < 2)
            fail("train: sentence " + std::to_string(i) + " has no predictable positions");
        if (corpus.sentences[i].size() - 1 > cfg.max_seq_len)
            fail("train: sentence " + std::to_string(i) + " needs " +
                 std::to_string(corpus.sentences[i].size() - 1) + " positions, max_seq_len is " +
                 std::to_string(cfg.max_seq_len));
    }

    fs::create_directories(out_dir);
    const std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
    const std::string final_path = (fs::path(out_dir) / "checkpoint.otlm").string();
    std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
    if (!metrics) fail("train: cannot write " + metrics_path);

    // Single stream, documented draw order: init, then shuffling, then dropout.
    Rng rng(train_cfg.seed);
    ModelWeights weights = ModelWeights::init(cfg, rng);
    auto params = collect_params(weights);
    OptimizerState opt = OptimizerState::init(params);
    const auto vocab_tokens = corpus.vocab.payload_tokens();

    std::vector<Batch> buckets = make_buckets(corpus, train_cfg.batch_size);
    std::vector<std::size_t> bucket_order(buckets.size());
    std::iota(bucket_order.begin(), bucket_order.end(), 0);
    std::size_t bucket_cursor = buckets.size(); // force an initial shuffle

    std::string last_checkpoint;
    for (std::size_t step = 1; step <= train_cfg.max_steps; ++step) {
        if (bucket_cursor >= bucket_order.size()) {
            shuffle(bucket_order, rng);
            bucket_cursor = 0;
        }
        const Batch& batch = buckets[bucket_order[bucket_cursor++]];

        std::size_t total_live = 0;
        for (std::size_t idx : batch.sentence_indices)
            total_live += corpus.sentences[idx].size() - 1;

        Tape tape;
        Tensor batch_loss;
        {
            TapeScope scope(tape);
            for (std::size_t idx : batch.sentence_indices) {
                Example ex = make_example(corpus.sentences[idx], batch.padded_len);
                ForwardTrace trace = lm_forward(ex.input, weights, false, &rng);
                Tensor loss = lm_loss(trace, ex.targets, ex.pad_mask);
                Tensor weighted =
                    scale(loss, static_cast<double>(ex.live) / static_cast<double>(total_live));
                batch_loss = batch_loss.defined() ? add(batch_loss, weighted) : weighted;
            }
        }

        const double loss_value = batch_loss.item();
        if (!std::isfinite(loss_value)) {
            fail("train: loss diverged (non-finite) at step " + std::to_string(step) +
                 (last_checkpoint.empty() ? std::string("; no checkpoint written yet")
                                          : "; last good checkpoint: " + last_checkpoint));
        }

        {
            TapeScope scope(tape);
            backward(batch_loss, tape);
        }
        const double grad_scale = clip_gradients(params, train_cfg.clip_norm);
        const double lr = train_cfg.warmup_steps > 0 && step <= train_cfg.warmup_steps
                              ? train_cfg.learning_rate * static_cast<double>(step) /
                                    static_cast<double>(train_cfg.warmup_steps)
                              : train_cfg.learning_rate;
        adam_step(params, opt, train_cfg, lr);
        for (auto& p : params) p.tensor.zero_grad();

        nlohmann::ordered_json rec;
        rec["step"] = step;
        rec["loss"] = loss_value;
        rec["ppl"] = std::exp(loss_value);
        rec["lr"] = lr;
        rec["grad_scale"] = grad_scale;
        metrics << rec.dump() << "\n";

        if (step % train_cfg.checkpoint_every == 0 && step != train_cfg.max_steps) {
            const std::string path =
                (fs::path(out_dir) / ("checkpoint-" + std::to_string(step) + ".otlm")).string();
            save_checkpoint(weights, path, &vocab_tokens, corpus.vocab.lowercase);
            last_checkpoint = path;
        }
    }

    metrics.flush();
    save_checkpoint(weights, final_path, &vocab_tokens, corpus.vocab.lowercase);
    return final_path;
}

double evaluate_perplexity(ModelWeights& weights, const TokenizedCorpus& corpus) {
    if (corpus.sentences.empty()) fail("evaluate_perplexity: empty corpus");
    if (weights.config.vocab_size != corpus.vocab.size())
        fail("evaluate_perplexity: corpus vocabulary size " + std::to_string(corpus.vocab.size()) +
             " does not match model vocab_size " + std::to_string(weights.config.vocab_size));
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
        const auto& sentence = corpus.sentences[i];
        if (sentence.size() < 2)
            fail("evaluate_perplexity: sentence " + std::to_string(i) + " has no predictable positions");
        Example ex = make_example(sentence, sentence.size());
        ForwardTrace trace = lm_forward(ex.input, weights, false);
        const double mean_ce = lm_loss(trace, ex.targets, ex.pad_mask).item();
        total += mean_ce * static_cast<double>(ex.live);
        count += ex.live;
    }
    return std::exp(total / static_cast<double>(count));
}

double evaluate_perplexity(const std::string& checkpoint_path, const TokenizedCorpus& corpus) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    return evaluate_perplexity(ckpt.weights, corpus);
}

} // namespace otlm
