#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "otlm/config.hpp"
#include "otlm/corpus.hpp"
#include "otlm/model.hpp"

namespace otlm {

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 1.0;
    std::size_t batch_size = 16;
    std::size_t max_steps = 1000;
    std::size_t warmup_steps = 0;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 500;

    void validate() const;
    KvMap to_kv() const;
    static TrainConfig from_kv(const KvMap& kv);
    static const std::vector<std::string>& keys();
};

struct NamedParam {
    std::string name;
    Tensor tensor;
};

std::vector<NamedParam> collect_params(ModelWeights& weights);

// First/second moment estimates parallel to the parameter list.
struct OptimizerState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::size_t step = 0;

    static OptimizerState init(const std::vector<NamedParam>& params);
};

// If the global L2 norm exceeds clip_norm, scales every gradient by
// clip_norm/norm; returns the scale applied (1.0 when untouched).
double clip_gradients(std::vector<NamedParam>& params, double clip_norm);

// Bias-corrected Adam over params[i].tensor.grad(); `lr` is the effective
// rate for this step (warmup is the caller's job). NaN gradients abort with
// the parameter's name.
void adam_step(std::vector<NamedParam>& params, OptimizerState& state, const TrainConfig& cfg,
               double lr);

// Shuffled length-bucketed mini-batch next-word training with linear warmup,
// per-step metrics (JSONL), periodic checkpoints. Fully determined by
// cfg.seed; RNG stream order: init, then shuffling, then dropout.
// Returns the final checkpoint path.
std::string train(const TokenizedCorpus& corpus, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const std::string& out_dir);

// exp(mean next-token cross-entropy over non-pad positions).
double evaluate_perplexity(ModelWeights& weights, const TokenizedCorpus& corpus);
double evaluate_perplexity(const std::string& checkpoint_path, const TokenizedCorpus& corpus);

} // namespace otlm
