#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "otlm/error.hpp"
#include "otlm/rng.hpp"

namespace otlm {

// ---------------------------------------------------------------------------
// Precision
// ---------------------------------------------------------------------------

// One mode per computation. wide = 64-bit values; narrow = every stored value
// is rounded through 32-bit IEEE-754 after each kernel, so checkpoints
// (float32 on disk) round-trip bitwise.
enum class Precision { wide, narrow };

void set_precision(Precision mode);
Precision precision();

inline double round_to_precision(double v, Precision mode) {
    return mode == Precision::narrow ? static_cast<double>(static_cast<float>(v)) : v;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

struct TensorData {
    std::vector<std::size_t> shape;   // row-major; empty shape = scalar
    std::vector<double> values;       // product(shape) entries
    bool requires_grad = false;
    std::vector<double> grad;         // empty until backward touches it
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<std::size_t> shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev, bool requires_grad = false);

    bool defined() const { return data_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return data_->shape; }
    std::size_t rank() const { return data_->shape.size(); }
    std::size_t dim(std::size_t i) const { return data_->shape[i]; }
    std::size_t numel() const { return data_->values.size(); }

    std::vector<double>& values() { return data_->values; }
    const std::vector<double>& values() const { return data_->values; }

    bool requires_grad() const { return data_->requires_grad; }
    void set_requires_grad(bool b) { data_->requires_grad = b; }

    // Allocated (zero-filled) on first access.
    std::vector<double>& grad();
    bool has_grad() const { return !data_->grad.empty(); }
    void zero_grad() { data_->grad.clear(); }

    double item() const;                         // scalar tensors only
    double at(std::size_t row, std::size_t col) const; // rank-2 convenience
    Tensor detach_copy() const;                  // same values, no grad participation

    std::shared_ptr<TensorData> storage() const { return data_; }

private:
    std::shared_ptr<TensorData> data_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

// ---------------------------------------------------------------------------
// Tape (reverse-mode autodiff)
// ---------------------------------------------------------------------------

struct TapeNode {
    std::shared_ptr<TensorData> output;
    std::function<void()> backward;
};

// Single-threaded: one forward/backward pass owns its tape exclusively.
class Tape {
public:
    void record(TapeNode node) { nodes_.push_back(std::move(node)); }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    std::vector<TapeNode>& nodes() { return nodes_; }

private:
    std::vector<TapeNode> nodes_;
};

Tape* active_tape();

// RAII activation of a tape; nesting restores the previous one.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

// Populates grad for every requires_grad tensor reachable from loss,
// then clears the tape. loss must be a one-element tensor.
void backward(const Tensor& loss, Tape& tape);

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

enum class Kernel {
    matmul,
    add,
    mul,
    scale,
    sigmoid,
    tanh,
    relu,
    softmax_lastdim,
    cumsum_lastdim,
    sum_lastdim,
    mean,
    concat_lastdim,
    slice,
    transpose_last_two,
    mask_fill,
    layer_norm,
    embedding_lookup,
    reverse_lastdim,
};

const char* kernel_name(Kernel k);

struct KernelAttrs {
    double scalar = 0.0;               // scale factor / mask_fill constant
    std::size_t offset = 0;            // slice start (last dim)
    std::size_t length = 0;            // slice length (last dim)
    double epsilon = 1e-5;             // layer_norm
    std::vector<std::int32_t> indices; // embedding_lookup ids
};

// Single dispatch point; records a backward rule on the active tape when any
// input participates in gradients. Shape mismatches raise Error naming the
// kernel and the shapes involved.
Tensor kernel_apply(Kernel k, const std::vector<Tensor>& inputs, const KernelAttrs& attrs = {});

// Convenience wrappers over kernel_apply.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b); // same shape, or b rank-1 row-broadcast
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sigmoid(const Tensor& a);
Tensor tanh_elem(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softmax_lastdim(const Tensor& a);
Tensor cumsum_lastdim(const Tensor& a);
Tensor sum_lastdim(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor concat_lastdim(const std::vector<Tensor>& parts);
Tensor slice_lastdim(const Tensor& a, std::size_t offset, std::size_t length);
Tensor transpose_last_two(const Tensor& a);
Tensor mask_fill(const Tensor& a, const Tensor& mask, double value); // mask entries != 0 are set to value
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double epsilon = 1e-5);
Tensor embedding_lookup(const Tensor& table, const std::vector<std::int32_t>& ids);
Tensor reverse_lastdim(const Tensor& a);

// cumsum(softmax(logits)) along the last dimension: entries in [0,1],
// non-decreasing, final entry 1 within precision tolerance.
Tensor cumax(const Tensor& logits);

// Mean over non-pad positions of -log softmax(logits[t])[targets[t]].
// Fused primitive (stable log-sum-exp form) with backward softmax - onehot;
// the kernel enum has no log/gather to compose it from.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& targets,
                     const std::vector<bool>& pad_mask);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

// Max over coordinates of |analytic - central_difference| /
// max(1, |analytic| + |central_difference|). Requires wide precision.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                  double eps = 1e-5);

// Same check against every coordinate of every listed parameter for a loss
// that closes over them (module- and model-scale checks). Clears the
// parameters' grads before and after.
double grad_check_params(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& params,
                         double eps = 1e-5);

} // namespace otlm
