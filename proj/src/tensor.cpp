#include "otlm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

namespace otlm {

// ---------------------------------------------------------------------------
// Precision
// ---------------------------------------------------------------------------

namespace {
Precision g_precision = Precision::wide;
thread_local Tape* g_active_tape = nullptr;

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

void round_all(std::vector<double>& v) {
    if (g_precision == Precision::narrow) {
        for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    }
}

void ensure_grad(TensorData& t) {
    if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
}

} // namespace

void set_precision(Precision mode) { g_precision = mode; }
Precision precision() { return g_precision; }

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    for (std::size_t d : shape)
        if (d == 0) fail("tensor shape " + shape_str(shape) + " has a zero dimension");
    Tensor t;
    t.data_ = std::make_shared<TensorData>();
    t.data_->shape = std::move(shape);
    t.data_->values.assign(shape_numel(t.data_->shape), round_to_precision(value, g_precision));
    t.data_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size())
        fail("tensor shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) + " values");
    Tensor t;
    t.data_ = std::make_shared<TensorData>();
    t.data_->shape = std::move(shape);
    t.data_->values = std::move(values);
    round_all(t.data_->values);
    t.data_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

Tensor Tensor::randn(std::vector<std::size_t> shape, Rng& rng, double stddev, bool requires_grad) {
    std::vector<double> vals(shape_numel(shape));
    for (double& v : vals) v = stddev * rng_normal(rng);
    return from(std::move(shape), std::move(vals), requires_grad);
}

std::vector<double>& Tensor::grad() {
    ensure_grad(*data_);
    return data_->grad;
}

double Tensor::item() const {
    if (numel() != 1) fail("item() on non-scalar tensor of shape " + shape_str(shape()));
    return data_->values[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    return data_->values[row * data_->shape.back() + col];
}

Tensor Tensor::detach_copy() const {
    Tensor t;
    t.data_ = std::make_shared<TensorData>();
    t.data_->shape = data_->shape;
    t.data_->values = data_->values;
    t.data_->requires_grad = false;
    return t;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

void backward(const Tensor& loss, Tape& tape) {
    if (loss.numel() != 1)
        fail("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    ensure_grad(*loss.storage());
    loss.storage()->grad[0] = 1.0;
    auto& nodes = tape.nodes();
    for (std::size_t i = nodes.size(); i-- > 0;) {
        if (!nodes[i].output->grad.empty()) nodes[i].backward();
    }
    tape.clear();
}

// ---------------------------------------------------------------------------
// Kernel dispatch
// ---------------------------------------------------------------------------

const char* kernel_name(Kernel k) {
    switch (k) {
        case Kernel::matmul: return "matmul";
        case Kernel::add: return "add";
        case Kernel::mul: return "mul";
        case Kernel::scale: return "scale";
        case Kernel::sigmoid: return "sigmoid";
        case Kernel::tanh: return "tanh";
        case Kernel::relu: return "relu";
        case Kernel::softmax_lastdim: return "softmax_lastdim";
        case Kernel::cumsum_lastdim: return "cumsum_lastdim";
        case Kernel::sum_lastdim: return "sum_lastdim";
        case Kernel::mean: return "mean";
        case Kernel::concat_lastdim: return "concat_lastdim";
        case Kernel::slice: return "slice";
        case Kernel::transpose_last_two: return "transpose_last_two";
        case Kernel::mask_fill: return "mask_fill";
        case Kernel::layer_norm: return "layer_norm";
        case Kernel::embedding_lookup: return "embedding_lookup";
        case Kernel::reverse_lastdim: return "reverse_lastdim";
    }
    return "?";
}

namespace {

[[noreturn]] void shape_fail(Kernel k, const std::string& detail) {
    fail(std::string(kernel_name(k)) + ": " + detail);
}

void require_inputs(Kernel k, const std::vector<Tensor>& in, std::size_t n) {
    if (in.size() != n)
        shape_fail(k, "expected " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
}

// Finalize an output tensor: precision rounding, grad participation, tape node.
Tensor finish(Kernel, const std::vector<Tensor>& inputs, Tensor out,
              std::function<void()> backward_rule) {
    round_all(out.values());
    bool any_grad = false;
    for (const auto& t : inputs) any_grad = any_grad || t.requires_grad();
    Tape* tape = g_active_tape;
    if (tape && any_grad) {
        out.set_requires_grad(true);
        tape->record({out.storage(), std::move(backward_rule)});
    }
    return out;
}

std::size_t last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }
std::size_t row_count(const Tensor& t) { return t.numel() / last_dim(t); }

// --- individual kernels ----------------------------------------------------

Tensor k_matmul(const std::vector<Tensor>& in) {
    const Tensor& a = in[0];
    const Tensor& b = in[1];
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        shape_fail(Kernel::matmul, "shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + " do not conform");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    {
        const double* pa = a.values().data();
        const double* pb = b.values().data();
        double* po = out.values().data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double av = pa[i * k + kk];
                const double* pbr = pb + kk * n;
                double* por = po + i * n;
                for (std::size_t j = 0; j < n; ++j) por[j] += av * pbr[j];
            }
    }
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    return finish(Kernel::matmul, in, out, [sa, sb, so, m, k, n] {
        const auto& go = so->grad;
        if (sa->requires_grad) {
            ensure_grad(*sa);
            // dA = dC * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += go[i * n + j] * sb->values[kk * n + j];
                    sa->grad[i * k + kk] += acc;
                }
        }
        if (sb->requires_grad) {
            ensure_grad(*sb);
            // dB = A^T * dC
            for (std::size_t kk = 0; kk < k; ++kk)
                for (std::size_t i = 0; i < m; ++i) {
                    const double av = sa->values[i * k + kk];
                    for (std::size_t j = 0; j < n; ++j) sb->grad[kk * n + j] += av * go[i * n + j];
                }
        }
    });
}

Tensor k_add(const std::vector<Tensor>& in) {
    const Tensor& a = in[0];
    const Tensor& b = in[1];
    const bool broadcast = b.rank() == 1 && a.rank() >= 1 && a.shape() != b.shape();
    if (broadcast) {
        if (a.shape().back() != b.dim(0))
            shape_fail(Kernel::add, "cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
    } else if (a.shape() != b.shape()) {
        shape_fail(Kernel::add, "shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t d = last_dim(a), rows = row_count(a);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j)
            out.values()[r * d + j] = a.values()[r * d + j] + (broadcast ? b.values()[j] : b.values()[r * d + j]);
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    return finish(Kernel::add, in, out, [sa, sb, so, broadcast, d, rows] {
        const auto& go = so->grad;
        if (sa->requires_grad) {
            ensure_grad(*sa);
            for (std::size_t i = 0; i < go.size(); ++i) sa->grad[i] += go[i];
        }
        if (sb->requires_grad) {
            ensure_grad(*sb);
            if (broadcast) {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) sb->grad[j] += go[r * d + j];
            } else {
                for (std::size_t i = 0; i < go.size(); ++i) sb->grad[i] += go[i];
            }
        }
    });
}

Tensor k_mul(const std::vector<Tensor>& in) {
    const Tensor& a = in[0];
    const Tensor& b = in[1];
    if (a.shape() != b.shape())
        shape_fail(Kernel::mul, "shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    return finish(Kernel::mul, in, out, [sa, sb, so] {
        const auto& go = so->grad;
        if (sa->requires_grad) {
            ensure_grad(*sa);
            for (std::size_t i = 0; i < go.size(); ++i) sa->grad[i] += go[i] * sb->values[i];
        }
        if (sb->requires_grad) {
            ensure_grad(*sb);
            for (std::size_t i = 0; i < go.size(); ++i) sb->grad[i] += go[i] * sa->values[i];
        }
    });
}

Tensor k_scale(const std::vector<Tensor>& in, double factor) {
    const Tensor& a = in[0];
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.values()[i] = a.values()[i] * factor;
    auto sa = a.storage(), so = out.storage();
    return finish(Kernel::scale, in, out, [sa, so, factor] {
        if (!sa->requires_grad) return;
        ensure_grad(*sa);
        for (std::size_t i = 0; i < so->grad.size(); ++i) sa->grad[i] += so->grad[i] * factor;
    });
}

template <typename F, typename DF>
Tensor k_unary(Kernel k, const std::vector<Tensor>& in, F f, DF df) {
    const Tensor& a = in[0];
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.values()[i] = f(a.values()[i]);
    auto sa = a.storage(), so = out.storage();
    return finish(k, in, out, [sa, so, df] {
        if (!sa->requires_grad) return;
        ensure_grad(*sa);
        for (std::size_t i = 0; i < so->grad.size(); ++i)
            sa->grad[i] += so->grad[i] * df(sa->values[i], so->values[i]);
    });
}

Tensor k_softmax(const std::vector<Tensor>& in) {
    const Tensor& a = in[0];
    if (a.rank() == 0) shape_fail(Kernel::softmax_lastdim, "requires rank >= 1, got scalar");
    const std::size_t d = last_dim(a), rows = row_count(a);
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.values().data() + r * d;
        double* y = out.values().data() + r * d;
        double mx = x[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < d; ++j) y[j] *= inv;
    }
    auto sa = a.storage(), so = out.storage();
    return finish(Kernel::softmax_lastdim, in, out, [sa, so, d, rows] {
        if (!sa->requires_grad) return;
        ensure_grad(*sa);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* p = so->values.data() + r * d;
            const double* g = so->grad.data() + r * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += g[j] * p[j];
            for (std::size_t j = 0; j < d; ++j) sa->grad[r * d + j] += p[j] * (g[j] - dot);
        }
    });
}

Tensor k_cumsum(const std::vector<Tensor>& in) {
    const Tensor& a = in[0];
    if (a.rank() == 0) shape_fail(Kernel::cumsum_lastdim, "requires rank >= 1, got scalar");
    const std::size_t d = last_dim(a), rows = row_count(a);
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            acc += a.values()[r * d + j];
            out.values()[r * d + j] = acc;
        }
    }
    auto sa = a.storage(), so = out.storage();
    return finish(Kernel::cumsum_lastdim, in, out, [sa, so, d, rows] {
        if (!sa->requires_grad) return;
        ensure_grad(*sa);
        for (std::size_t r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (std::size_t j = d; j-- > 0;) {
                acc += so->grad[r * d + j];
                sa->grad[r * d + j] += acc;
            }
        }
    });
}

Tensor k_sum_lastdim(const std::vector<Tensor>& in) {
    const Tensor& a = in[0];
    if (a.rank() == 0) shape_fail(Kernel::sum_lastdim, "requires rank >= 1, got scalar");
    const std::size_t d = last_dim(a), rows = row_count(a);
    std::vector<std::size_t> oshape(a.shape().begin(), a.shape().end() - 1);
    Tensor out = Tensor::zeros(oshape);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += a.values()[r * d + j];
        out.values()[r] = acc;
    }
    auto sa = a.storage(), so = out.storage();
    return finish(Kernel::sum_lastdim, in, out, [sa, so, d, rows] {
        if (!sa->requires_grad) return;
        ensure_grad(*sa);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) sa->grad[r * d + j] += so->grad[r];
    });
}

Tensor k_mean(const std::vector<Tensor>& in) {
    const Tensor& a = in[0];
    const std::size_t n = a.numel();
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    auto sa = a.storage(), so = out.storage();
    return finish(Kernel::mean, in, out, [sa, so, n] {
        if (!sa->requires_grad) return;
        ensure_grad(*sa);
        const double g = so->grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) sa->grad[i] += g;
    });
}

Tensor k_concat(const std::vector<Tensor>& in) {
    if (in.empty()) shape_fail(Kernel::concat_lastdim, "no inputs");
    const auto& s0 = in[0].shape();
    if (s0.empty()) shape_fail(Kernel::concat_lastdim, "requires rank >= 1 inputs");
    std::size_t total_last = 0;
    for (const auto& t : in) {
        if (t.rank() != s0.size() ||
            !std::equal(s0.begin(), s0.end() - 1, t.shape().begin()))
            shape_fail(Kernel::concat_lastdim,
                       "shapes " + shape_str(s0) + " vs " + shape_str(t.shape()) + " differ in leading dims");
        total_last += t.shape().back();
    }
    std::vector<std::size_t> oshape(s0);
    oshape.back() = total_last;
    Tensor out = Tensor::zeros(oshape);
    const std::size_t rows = row_count(out);
    std::size_t col = 0;
    for (const auto& t : in) {
        const std::size_t d = t.shape().back();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(t.values().data() + r * d, d, out.values().data() + r * total_last + col);
        col += d;
    }
    std::vector<std::shared_ptr<TensorData>> srcs;
    for (const auto& t : in) srcs.push_back(t.storage());
    auto so = out.storage();
    return finish(Kernel::concat_lastdim, in, out, [srcs, so, rows, total_last] {
        std::size_t col = 0;
        for (const auto& s : srcs) {
            const std::size_t d = s->shape.back();
            if (s->requires_grad) {
                ensure_grad(*s);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j)
                        s->grad[r * d + j] += so->grad[r * total_last + col + j];
            }
            col += d;
        }
    });
}

Tensor k_slice(const std::vector<Tensor>& in, std::size_t offset, std::size_t length) {
    const Tensor& a = in[0];
    if (a.rank() == 0) shape_fail(Kernel::slice, "requires rank >= 1, got scalar");
    const std::size_t d = last_dim(a);
    if (length == 0 || offset + length > d)
        shape_fail(Kernel::slice, "range [" + std::to_string(offset) + "," + std::to_string(offset + length) +
                                      ") out of last dim " + std::to_string(d));
    std::vector<std::size_t> oshape(a.shape());
    oshape.back() = length;
    Tensor out = Tensor::zeros(oshape);
    const std::size_t rows = row_count(a);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(a.values().data() + r * d + offset, length, out.values().data() + r * length);
    auto sa = a.storage(), so = out.storage();
    return finish(Kernel::slice, in, out, [sa, so, d, rows, offset, length] {
        if (!sa->requires_grad) return;
        ensure_grad(*sa);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < length; ++j)
                sa->grad[r * d + offset + j] += so->grad[r * length + j];
    });
}

Tensor k_transpose(const std::vector<Tensor>& in) {
    const Tensor& a = in[0];
    if (a.rank() < 2) shape_fail(Kernel::transpose_last_two, "requires rank >= 2, got " + shape_str(a.shape()));
    const std::size_t rkn = a.rank();
    const std::size_t p = a.dim(rkn - 2), q = a.dim(rkn - 1);
    const std::size_t mats = a.numel() / (p * q);
    std::vector<std::size_t> oshape(a.shape());
    std::swap(oshape[rkn - 2], oshape[rkn - 1]);
    Tensor out = Tensor::zeros(oshape);
    for (std::size_t m = 0; m < mats; ++m)
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j)
                out.values()[m * p * q + j * p + i] = a.values()[m * p * q + i * q + j];
    auto sa = a.storage(), so = out.storage();
    return finish(Kernel::transpose_last_two, in, out, [sa, so, p, q, mats] {
        if (!sa->requires_grad) return;
        ensure_grad(*sa);
        for (std::size_t m = 0; m < mats; ++m)
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < q; ++j)
                    sa->grad[m * p * q + i * q + j] += so->grad[m * p * q + j * p + i];
    });
}

Tensor k_mask_fill(const std::vector<Tensor>& in, double value) {
    const Tensor& a = in[0];
    const Tensor& mask = in[1];
    if (a.shape() != mask.shape())
        shape_fail(Kernel::mask_fill, "shapes " + shape_str(a.shape()) + " vs mask " + shape_str(mask.shape()));
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i)
        out.values()[i] = mask.values()[i] != 0.0 ? value : a.values()[i];
    auto sa = a.storage(), sm = mask.storage(), so = out.storage();
    return finish(Kernel::mask_fill, in, out, [sa, sm, so] {
        if (!sa->requires_grad) return;
        ensure_grad(*sa);
        for (std::size_t i = 0; i < so->grad.size(); ++i)
            if (sm->values[i] == 0.0) sa->grad[i] += so->grad[i];
    });
}

Tensor k_layer_norm(const std::vector<Tensor>& in, double epsilon) {
    const Tensor& x = in[0];
    const Tensor& gamma = in[1];
    const Tensor& beta = in[2];
    if (x.rank() == 0) shape_fail(Kernel::layer_norm, "requires rank >= 1, got scalar");
    const std::size_t d = last_dim(x), rows = row_count(x);
    if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
        shape_fail(Kernel::layer_norm, "scale/shift " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                                           " vs feature dim " + std::to_string(d));
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_sigma(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* px = x.values().data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += px[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (px[j] - mu) * (px[j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + epsilon);
        inv_sigma[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (px[j] - mu) * is;
            out.values()[r * d + j] = gamma.values()[j] * xhat[r * d + j] + beta.values()[j];
        }
    }
    auto sx = x.storage(), sg = gamma.storage(), sb = beta.storage(), so = out.storage();
    return finish(Kernel::layer_norm, in, out,
                  [sx, sg, sb, so, d, rows, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)] {
                      const auto& go = so->grad;
                      for (std::size_t r = 0; r < rows; ++r) {
                          const double* g = go.data() + r * d;
                          const double* xh = xhat.data() + r * d;
                          if (sg->requires_grad) {
                              ensure_grad(*sg);
                              for (std::size_t j = 0; j < d; ++j) sg->grad[j] += g[j] * xh[j];
                          }
                          if (sb->requires_grad) {
                              ensure_grad(*sb);
                              for (std::size_t j = 0; j < d; ++j) sb->grad[j] += g[j];
                          }
                          if (sx->requires_grad) {
                              ensure_grad(*sx);
                              double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                              for (std::size_t j = 0; j < d; ++j) {
                                  const double dxh = g[j] * sg->values[j];
                                  mean_dxhat += dxh;
                                  mean_dxhat_xhat += dxh * xh[j];
                              }
                              mean_dxhat /= static_cast<double>(d);
                              mean_dxhat_xhat /= static_cast<double>(d);
                              for (std::size_t j = 0; j < d; ++j) {
                                  const double dxh = g[j] * sg->values[j];
                                  sx->grad[r * d + j] +=
                                      inv_sigma[r] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                              }
                          }
                      }
                  });
}

Tensor k_embedding(const std::vector<Tensor>& in, const std::vector<std::int32_t>& ids) {
    const Tensor& table = in[0];
    if (table.rank() != 2)
        shape_fail(Kernel::embedding_lookup, "table must be rank 2, got " + shape_str(table.shape()));
    const std::size_t v = table.dim(0), d = table.dim(1);
    if (ids.empty()) shape_fail(Kernel::embedding_lookup, "empty index list");
    for (std::int32_t id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            fail("embedding_lookup: index " + std::to_string(id) + " out of range [0," + std::to_string(v) + ")");
    Tensor out = Tensor::zeros({ids.size(), d});
    for (std::size_t r = 0; r < ids.size(); ++r)
        std::copy_n(table.values().data() + static_cast<std::size_t>(ids[r]) * d, d,
                    out.values().data() + r * d);
    auto st = table.storage(), so = out.storage();
    return finish(Kernel::embedding_lookup, in, out, [st, so, ids, d] {
        if (!st->requires_grad) return;
        ensure_grad(*st);
        for (std::size_t r = 0; r < ids.size(); ++r)
            for (std::size_t j = 0; j < d; ++j)
                st->grad[static_cast<std::size_t>(ids[r]) * d + j] += so->grad[r * d + j];
    });
}

Tensor k_reverse(const std::vector<Tensor>& in) {
    const Tensor& a = in[0];
    if (a.rank() == 0) shape_fail(Kernel::reverse_lastdim, "requires rank >= 1, got scalar");
    const std::size_t d = last_dim(a), rows = row_count(a);
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j)
            out.values()[r * d + j] = a.values()[r * d + (d - 1 - j)];
    auto sa = a.storage(), so = out.storage();
    return finish(Kernel::reverse_lastdim, in, out, [sa, so, d, rows] {
        if (!sa->requires_grad) return;
        ensure_grad(*sa);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j)
                sa->grad[r * d + (d - 1 - j)] += so->grad[r * d + j];
    });
}

} // namespace

Tensor kernel_apply(Kernel k, const std::vector<Tensor>& inputs, const KernelAttrs& attrs) {
    switch (k) {
        case Kernel::matmul:
            require_inputs(k, inputs, 2);
            return k_matmul(inputs);
        case Kernel::add:
            require_inputs(k, inputs, 2);
            return k_add(inputs);
        case Kernel::mul:
            require_inputs(k, inputs, 2);
            return k_mul(inputs);
        case Kernel::scale:
            require_inputs(k, inputs, 1);
            return k_scale(inputs, attrs.scalar);
        case Kernel::sigmoid:
            require_inputs(k, inputs, 1);
            return k_unary(k, inputs,
                           [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                           [](double, double y) { return y * (1.0 - y); });
        case Kernel::tanh:
            require_inputs(k, inputs, 1);
            return k_unary(k, inputs,
                           [](double x) { return std::tanh(x); },
                           [](double, double y) { return 1.0 - y * y; });
        case Kernel::relu:
            require_inputs(k, inputs, 1);
            return k_unary(k, inputs,
                           [](double x) { return x > 0.0 ? x : 0.0; },
                           [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
        case Kernel::softmax_lastdim:
            require_inputs(k, inputs, 1);
            return k_softmax(inputs);
        case Kernel::cumsum_lastdim:
            require_inputs(k, inputs, 1);
            return k_cumsum(inputs);
        case Kernel::sum_lastdim:
            require_inputs(k, inputs, 1);
            return k_sum_lastdim(inputs);
        case Kernel::mean:
            require_inputs(k, inputs, 1);
            return k_mean(inputs);
        case Kernel::concat_lastdim:
            return k_concat(inputs);
        case Kernel::slice:
            require_inputs(k, inputs, 1);
            return k_slice(inputs, attrs.offset, attrs.length);
        case Kernel::transpose_last_two:
            require_inputs(k, inputs, 1);
            return k_transpose(inputs);
        case Kernel::mask_fill:
            require_inputs(k, inputs, 2);
            return k_mask_fill(inputs, attrs.scalar);
        case Kernel::layer_norm:
            require_inputs(k, inputs, 3);
            return k_layer_norm(inputs, attrs.epsilon);
        case Kernel::embedding_lookup:
            require_inputs(k, inputs, 1);
            return k_embedding(inputs, attrs.indices);
        case Kernel::reverse_lastdim:
            require_inputs(k, inputs, 1);
            return k_reverse(inputs);
    }
    fail("kernel_apply: unknown kernel");
}

// --- wrappers ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) { return kernel_apply(Kernel::matmul, {a, b}); }
Tensor add(const Tensor& a, const Tensor& b) { return kernel_apply(Kernel::add, {a, b}); }
Tensor mul(const Tensor& a, const Tensor& b) { return kernel_apply(Kernel::mul, {a, b}); }
Tensor scale(const Tensor& a, double factor) {
    KernelAttrs attrs;
    attrs.scalar = factor;
    return kernel_apply(Kernel::scale, {a}, attrs);
}
Tensor sigmoid(const Tensor& a) { return kernel_apply(Kernel::sigmoid, {a}); }
Tensor tanh_elem(const Tensor& a) { return kernel_apply(Kernel::tanh, {a}); }
Tensor relu(const Tensor& a) { return kernel_apply(Kernel::relu, {a}); }
Tensor softmax_lastdim(const Tensor& a) { return kernel_apply(Kernel::softmax_lastdim, {a}); }
Tensor cumsum_lastdim(const Tensor& a) { return kernel_apply(Kernel::cumsum_lastdim, {a}); }
Tensor sum_lastdim(const Tensor& a) { return kernel_apply(Kernel::sum_lastdim, {a}); }
Tensor mean_all(const Tensor& a) { return kernel_apply(Kernel::mean, {a}); }
Tensor concat_lastdim(const std::vector<Tensor>& parts) { return kernel_apply(Kernel::concat_lastdim, parts); }
Tensor slice_lastdim(const Tensor& a, std::size_t offset, std::size_t length) {
    KernelAttrs attrs;
    attrs.offset = offset;
    attrs.length = length;
    return kernel_apply(Kernel::slice, {a}, attrs);
}
Tensor transpose_last_two(const Tensor& a) { return kernel_apply(Kernel::transpose_last_two, {a}); }
Tensor mask_fill(const Tensor& a, const Tensor& mask, double value) {
    KernelAttrs attrs;
    attrs.scalar = value;
    return kernel_apply(Kernel::mask_fill, {a, mask}, attrs);
}
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double epsilon) {
    KernelAttrs attrs;
    attrs.epsilon = epsilon;
    return kernel_apply(Kernel::layer_norm, {x, gamma, beta}, attrs);
}
Tensor embedding_lookup(const Tensor& table, const std::vector<std::int32_t>& ids) {
    KernelAttrs attrs;
    attrs.indices = ids;
    return kernel_apply(Kernel::embedding_lookup, {table}, attrs);
}
Tensor reverse_lastdim(const Tensor& a) { return kernel_apply(Kernel::reverse_lastdim, {a}); }

Tensor cumax(const Tensor& logits) { return cumsum_lastdim(softmax_lastdim(logits)); }

// --- fused cross-entropy -----------------------------------------------------

Tensor cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& targets,
                     const std::vector<bool>& pad_mask) {
    if (logits.rank() != 2)
        fail("cross_entropy: logits must be rank 2, got " + shape_str(logits.shape()));
    const std::size_t t_len = logits.dim(0), v = logits.dim(1);
    if (targets.size() != t_len)
        fail("cross_entropy: " + std::to_string(targets.size()) + " targets vs " + std::to_string(t_len) +
             " positions");
    if (!pad_mask.empty() && pad_mask.size() != t_len)
        fail("cross_entropy: pad mask length " + std::to_string(pad_mask.size()) + " vs " + std::to_string(t_len));
    std::size_t live = 0;
    for (std::size_t t = 0; t < t_len; ++t)
        if (pad_mask.empty() || !pad_mask[t]) ++live;
    if (live == 0) fail("cross_entropy: all positions are padded");
    for (std::size_t t = 0; t < t_len; ++t) {
        if (pad_mask.empty() || !pad_mask[t]) {
            if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= v)
                fail("cross_entropy: target " + std::to_string(targets[t]) + " out of range [0," +
                     std::to_string(v) + ")");
        }
    }

    double total = 0.0;
    std::vector<double> lse(t_len, 0.0), mx(t_len, 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
        if (!pad_mask.empty() && pad_mask[t]) continue;
        const double* row = logits.values().data() + t * v;
        double m = row[0];
        for (std::size_t j = 1; j < v; ++j) m = std::max(m, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - m);
        mx[t] = m;
        lse[t] = m + std::log(s);
        total += lse[t] - row[static_cast<std::size_t>(targets[t])];
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(live));

    auto sl = logits.storage(), so = out.storage();
    Tape* tape = g_active_tape;
    if (tape && logits.requires_grad()) {
        out.set_requires_grad(true);
        tape->record({so, [sl, so, targets, pad_mask, t_len, v, live, lse] {
                          if (!sl->requires_grad) return;
                          ensure_grad(*sl);
                          const double g = so->grad[0] / static_cast<double>(live);
                          for (std::size_t t = 0; t < t_len; ++t) {
                              if (!pad_mask.empty() && pad_mask[t]) continue;
                              const double* row = sl->values.data() + t * v;
                              for (std::size_t j = 0; j < v; ++j) {
                                  double p = std::exp(row[j] - lse[t]);
                                  double onehot = (j == static_cast<std::size_t>(targets[t])) ? 1.0 : 0.0;
                                  sl->grad[t * v + j] += g * (p - onehot);
                              }
                          }
                      }});
    }
    return out;
}

// --- gradient checking --------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double eps) {
    if (precision() != Precision::wide)
        fail("grad_check: wide precision mode is required for finite differences");
    if (eps <= 0.0) fail("grad_check: eps must be positive");

    Tensor x = point.detach_copy();
    x.set_requires_grad(true);
    std::vector<double> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = f(x);
        if (loss.numel() != 1)
            fail("grad_check: f must be scalar-valued, got shape " + shape_str(loss.shape()));
        backward(loss, tape);
        analytic = x.has_grad() ? x.grad() : std::vector<double>(x.numel(), 0.0);
    }

    // Central differences, evaluated with no tape active.
    Tensor probe = point.detach_copy();
    double max_err = 0.0;
    for (std::size_t i = 0; i < probe.numel(); ++i) {
        const double orig = probe.values()[i];
        probe.values()[i] = orig + eps;
        const double fp = f(probe).item();
        probe.values()[i] = orig - eps;
        const double fm = f(probe).item();
        probe.values()[i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double err = std::abs(analytic[i] - numeric) /
                           std::max(1.0, std::abs(analytic[i]) + std::abs(numeric));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

double grad_check_params(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& params,
                         double eps) {
    if (precision() != Precision::wide)
        fail("grad_check_params: wide precision mode is required for finite differences");
    if (eps <= 0.0) fail("grad_check_params: eps must be positive");

    for (Tensor p : params) p.zero_grad();
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = loss_fn();
        if (loss.numel() != 1)
            fail("grad_check_params: loss must be scalar, got shape " + shape_str(loss.shape()));
        backward(loss, tape);
        for (Tensor p : params)
            analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0));
    }
    for (Tensor p : params) p.zero_grad();

    double max_err = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double orig = p.values()[i];
            p.values()[i] = orig + eps;
            const double fp = loss_fn().item();
            p.values()[i] = orig - eps;
            const double fm = loss_fn().item();
            p.values()[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double err = std::abs(analytic[pi][i] - numeric) /
                               std::max(1.0, std::abs(analytic[pi][i]) + std::abs(numeric));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

} // namespace otlm
