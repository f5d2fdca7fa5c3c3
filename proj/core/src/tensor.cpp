#include "spanlab/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace spanlab {

namespace {

thread_local std::vector<Tape*> g_tape_stack;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

std::shared_ptr<TensorNode> new_node(Shape shape) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data.assign(shape_numel(n->shape), 0.0);
    return n;
}

// Creates the result node, runs the forward once, and records the node on
// the active tape (keeping parents and closures) when one exists.
Tensor make_op(const char* op, Shape shape,
               std::vector<std::shared_ptr<TensorNode>> parents,
               std::function<void(TensorNode&)> fwd,
               std::function<void(Tape&, TensorNode&)> bwd) {
    auto n = new_node(std::move(shape));
    n->op = op;
    n->parents = std::move(parents);
    fwd(*n);
    Tape* tape = Tape::active();
    if (tape) {
        n->leaf = false;
        for (const auto& p : n->parents)
            if (p->requires_grad) n->requires_grad = true;
        n->recompute = std::move(fwd);
        if (n->requires_grad) n->backprop = std::move(bwd);
        tape->record(n);
    } else {
        n->parents.clear();
    }
    return Tensor::wrap(std::move(n));
}

std::vector<double>& ensure_grad(Tape& tape, TensorNode& n) { return tape.grad_buf(n); }

}  // namespace

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        check(d >= 0, "negative extent in shape " + shape_str(s));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = new_node(std::move(shape));
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.raw().begin(), t.raw().end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    check(shape_numel(shape) == data.size(),
          "data length " + std::to_string(data.size()) + " does not match shape " +
              shape_str(shape));
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.raw()) v = rng.normal(0.0, stddev);
    return t;
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

const std::vector<double>& Tensor::grad() const& {
    if (node_->grad.empty()) throw UsageError("gradient requested before backward populated it");
    return node_->grad;
}

std::vector<double>& Tensor::grad_mut() {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
    return node_->grad;
}

double Tensor::item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

// ---- Tape ------------------------------------------------------------------

Tape::Tape() { g_tape_stack.push_back(this); }

Tape::~Tape() {
    assert(!g_tape_stack.empty() && g_tape_stack.back() == this);
    g_tape_stack.pop_back();
}

Tape* Tape::active() { return g_tape_stack.empty() ? nullptr : g_tape_stack.back(); }

std::vector<double>& Tape::grad_buf(TensorNode& n) {
    if (sink_ && n.leaf) return sink_->buffer(&n, n.numel());
    if (n.grad.empty()) n.grad.assign(n.numel(), 0.0);
    return n.grad;
}

void Tape::backward(const Tensor& loss, GradSink* sink) {
    if (!loss.defined() || loss.numel() != 1)
        throw UsageError("backward requires a scalar loss tensor");
    if (backward_done_)
        throw UsageError("backward called twice on the same tape without reset()");
    backward_done_ = true;
    sink_ = sink;
    grad_buf(*loss.node())[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        TensorNode& n = **it;
        if (n.backprop && !n.grad.empty()) n.backprop(*this, n);
    }
    // Contract: every requires-grad tensor touched by this tape ends up with
    // a populated gradient buffer, even if the loss did not reach it.
    for (const auto& rec : records_) {
        if (rec->requires_grad) ensure_grad(*this, *rec);
        for (const auto& p : rec->parents)
            if (p->requires_grad) ensure_grad(*this, *p);
    }
    sink_ = nullptr;
}

void Tape::reset() {
    for (auto& rec : records_) rec->grad.clear();
    backward_done_ = false;
}

void Tape::replay() {
    for (auto& rec : records_)
        if (rec->recompute) rec->recompute(*rec);
}

// ---- ops -------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    return make_op(
        "add", a.shape(), {a.node_ptr(), b.node_ptr()},
        [](TensorNode& n) {
            const auto& x = n.parents[0]->data;
            const auto& y = n.parents[1]->data;
            for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = x[i] + y[i];
        },
        [](Tape& t, TensorNode& n) {
            const auto& g = n.grad;
            for (int side = 0; side < 2; ++side) {
                TensorNode& p = *n.parents[side];
                if (!p.requires_grad) continue;
                auto& pg = t.grad_buf(p);
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
            }
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(),
          "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    return make_op(
        "sub", a.shape(), {a.node_ptr(), b.node_ptr()},
        [](TensorNode& n) {
            const auto& x = n.parents[0]->data;
            const auto& y = n.parents[1]->data;
            for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = x[i] - y[i];
        },
        [](Tape& t, TensorNode& n) {
            const auto& g = n.grad;
            if (n.parents[0]->requires_grad) {
                auto& pg = t.grad_buf(*n.parents[0]);
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
            }
            if (n.parents[1]->requires_grad) {
                auto& pg = t.grad_buf(*n.parents[1]);
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] -= g[i];
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    return make_op(
        "mul", a.shape(), {a.node_ptr(), b.node_ptr()},
        [](TensorNode& n) {
            const auto& x = n.parents[0]->data;
            const auto& y = n.parents[1]->data;
            for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = x[i] * y[i];
        },
        [](Tape& t, TensorNode& n) {
            const auto& g = n.grad;
            const auto& x = n.parents[0]->data;
            const auto& y = n.parents[1]->data;
            if (n.parents[0]->requires_grad) {
                auto& pg = t.grad_buf(*n.parents[0]);
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * y[i];
            }
            if (n.parents[1]->requires_grad) {
                auto& pg = t.grad_buf(*n.parents[1]);
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * x[i];
            }
        });
}

Tensor scale(const Tensor& a, double c) {
    return make_op(
        "scale", a.shape(), {a.node_ptr()},
        [c](TensorNode& n) {
            const auto& x = n.parents[0]->data;
            for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = c * x[i];
        },
        [c](Tape& t, TensorNode& n) {
            if (!n.parents[0]->requires_grad) return;
            auto& pg = t.grad_buf(*n.parents[0]);
            for (std::size_t i = 0; i < n.grad.size(); ++i) pg[i] += c * n.grad[i];
        });
}

namespace {

void mm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ar = a + static_cast<std::size_t>(i) * k;
        double* cr = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ar[p];
            const double* br = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

// c[m x n] += a[m x k] * b[n x k]^T
void mm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ar = a + static_cast<std::size_t>(i) * k;
        double* cr = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* br = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
            cr[j] += acc;
        }
    }
}

// c[k x n] += a[m x k]^T * b[m x n]
void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ar = a + static_cast<std::size_t>(i) * k;
        const double* br = b + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ar[p];
            double* cr = c + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 operands, got " +
                                              shape_str(a.shape()) + " and " +
                                              shape_str(b.shape()));
    check(a.dim(1) == b.dim(0), "matmul: inner extents differ, " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    return make_op(
        "matmul", {m, n}, {a.node_ptr(), b.node_ptr()},
        [m, k, n](TensorNode& nd) {
            std::fill(nd.data.begin(), nd.data.end(), 0.0);
            mm_acc(nd.parents[0]->data.data(), nd.parents[1]->data.data(), nd.data.data(), m, k, n);
        },
        [m, k, n](Tape& t, TensorNode& nd) {
            const double* g = nd.grad.data();
            if (nd.parents[0]->requires_grad)  // dA = g * B^T
                mm_nt_acc(g, nd.parents[1]->data.data(),
                          t.grad_buf(*nd.parents[0]).data(), m, n, k);
            if (nd.parents[1]->requires_grad)  // dB = A^T * g
                mm_tn_acc(nd.parents[0]->data.data(), g,
                          t.grad_buf(*nd.parents[1]).data(), m, k, n);
        });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2, "matmul_nt expects rank-2 operands, got " +
                                              shape_str(a.shape()) + " and " +
                                              shape_str(b.shape()));
    check(a.dim(1) == b.dim(1), "matmul_nt: inner extents differ, " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    return make_op(
        "matmul_nt", {m, n}, {a.node_ptr(), b.node_ptr()},
        [m, k, n](TensorNode& nd) {
            std::fill(nd.data.begin(), nd.data.end(), 0.0);
            mm_nt_acc(nd.parents[0]->data.data(), nd.parents[1]->data.data(), nd.data.data(), m,
                      k, n);
        },
        [m, k, n](Tape& t, TensorNode& nd) {
            const double* g = nd.grad.data();
            if (nd.parents[0]->requires_grad)  // dA = g * B
                mm_acc(g, nd.parents[1]->data.data(), t.grad_buf(*nd.parents[0]).data(), m, n, k);
            if (nd.parents[1]->requires_grad)  // dB = g^T * A
                mm_tn_acc(g, nd.parents[0]->data.data(), t.grad_buf(*nd.parents[1]).data(), m, n,
                          k);
        });
}

Tensor row_scale(const Tensor& a, const std::vector<double>& w) {
    check(a.rank() >= 1, "row_scale expects rank >= 1");
    check(static_cast<int>(w.size()) == a.dim(0),
          "row_scale: weight length " + std::to_string(w.size()) + " vs rows " +
              std::to_string(a.dim(0)));
    const std::size_t cols = a.numel() / static_cast<std::size_t>(a.dim(0));
    return make_op(
        "row_scale", a.shape(), {a.node_ptr()},
        [w, cols](TensorNode& n) {
            const auto& x = n.parents[0]->data;
            for (std::size_t i = 0; i < w.size(); ++i)
                for (std::size_t j = 0; j < cols; ++j) n.data[i * cols + j] = w[i] * x[i * cols + j];
        },
        [w, cols](Tape& t, TensorNode& n) {
            if (!n.parents[0]->requires_grad) return;
            auto& pg = t.grad_buf(*n.parents[0]);
            for (std::size_t i = 0; i < w.size(); ++i)
                for (std::size_t j = 0; j < cols; ++j) pg[i * cols + j] += w[i] * n.grad[i * cols + j];
        });
}

Tensor col_scale(const Tensor& a, const std::vector<double>& w) {
    check(a.rank() >= 1, "col_scale expects rank >= 1");
    const int last = a.dim(a.rank() - 1);
    check(static_cast<int>(w.size()) == last,
          "col_scale: weight length " + std::to_string(w.size()) + " vs last extent " +
              std::to_string(last));
    const std::size_t rows = a.numel() / static_cast<std::size_t>(last);
    return make_op(
        "col_scale", a.shape(), {a.node_ptr()},
        [w, rows](TensorNode& n) {
            const auto& x = n.parents[0]->data;
            const std::size_t c = w.size();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < c; ++j) n.data[i * c + j] = w[j] * x[i * c + j];
        },
        [w, rows](Tape& t, TensorNode& n) {
            if (!n.parents[0]->requires_grad) return;
            auto& pg = t.grad_buf(*n.parents[0]);
            const std::size_t c = w.size();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < c; ++j) pg[i * c + j] += w[j] * n.grad[i * c + j];
        });
}

namespace {

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double* xr = x + i * cols;
        double* yr = y + i * cols;
        double mx = xr[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        assert(std::isfinite(mx) && "softmax over an all-(-inf) slice");
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        const double inv = 1.0 / s;
        for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
    }
}

void softmax_rows_backward(const double* y, const double* g, double* gx, std::size_t rows,
                           std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double* yr = y + i * cols;
        const double* gr = g + i * cols;
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
        double* gxr = gx + i * cols;
        for (std::size_t j = 0; j < cols; ++j) gxr[j] += yr[j] * (gr[j] - dot);
    }
}

}  // namespace

Tensor softmax_lastdim(const Tensor& x) {
    check(x.rank() >= 1 && x.dim(x.rank() - 1) >= 1, "softmax_lastdim: empty last extent");
    const std::size_t cols = static_cast<std::size_t>(x.dim(x.rank() - 1));
    const std::size_t rows = x.numel() / cols;
    return make_op(
        "softmax_lastdim", x.shape(), {x.node_ptr()},
        [rows, cols](TensorNode& n) {
            softmax_rows(n.parents[0]->data.data(), n.data.data(), rows, cols);
        },
        [rows, cols](Tape& t, TensorNode& n) {
            if (!n.parents[0]->requires_grad) return;
            softmax_rows_backward(n.data.data(), n.grad.data(),
                                  t.grad_buf(*n.parents[0]).data(), rows, cols);
        });
}

Tensor causal_softmax(const Tensor& x) {
    check(x.rank() == 2 && x.dim(0) == x.dim(1),
          "causal_softmax expects a square matrix, got " + shape_str(x.shape()));
    const std::size_t T = static_cast<std::size_t>(x.dim(0));
    return make_op(
        "causal_softmax", x.shape(), {x.node_ptr()},
        [T](TensorNode& n) {
            const auto& xd = n.parents[0]->data;
            for (std::size_t i = 0; i < T; ++i) {
                const double* xr = xd.data() + i * T;
                double* yr = n.data.data() + i * T;
                double mx = xr[0];
                for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, xr[j]);
                double s = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    yr[j] = std::exp(xr[j] - mx);
                    s += yr[j];
                }
                const double inv = 1.0 / s;
                for (std::size_t j = 0; j <= i; ++j) yr[j] *= inv;
                for (std::size_t j = i + 1; j < T; ++j) yr[j] = 0.0;
            }
        },
        [T](Tape& t, TensorNode& n) {
            if (!n.parents[0]->requires_grad) return;
            auto& gx = t.grad_buf(*n.parents[0]);
            for (std::size_t i = 0; i < T; ++i) {
                const double* yr = n.data.data() + i * T;
                const double* gr = n.grad.data() + i * T;
                double dot = 0.0;
                for (std::size_t j = 0; j <= i; ++j) dot += yr[j] * gr[j];
                double* gxr = gx.data() + i * T;
                for (std::size_t j = 0; j <= i; ++j) gxr[j] += yr[j] * (gr[j] - dot);
            }
        });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    check(x.rank() >= 1, "layernorm expects rank >= 1");
    const int last = x.dim(x.rank() - 1);
    check(gain.rank() == 1 && gain.dim(0) == last,
          "layernorm: gain shape " + shape_str(gain.shape()) + " vs last extent " +
              std::to_string(last));
    check(bias.rank() == 1 && bias.dim(0) == last,
          "layernorm: bias shape " + shape_str(bias.shape()) + " vs last extent " +
              std::to_string(last));
    const std::size_t cols = static_cast<std::size_t>(last);
    const std::size_t rows = x.numel() / cols;
    return make_op(
        "layernorm", x.shape(), {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
        [rows, cols, eps](TensorNode& n) {
            const auto& xd = n.parents[0]->data;
            const auto& gn = n.parents[1]->data;
            const auto& bs = n.parents[2]->data;
            for (std::size_t i = 0; i < rows; ++i) {
                const double* xr = xd.data() + i * cols;
                double* yr = n.data.data() + i * cols;
                double mean = 0.0;
                for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
                mean /= static_cast<double>(cols);
                double var = 0.0;
                for (std::size_t j = 0; j < cols; ++j) {
                    const double d = xr[j] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(cols);
                const double inv = 1.0 / std::sqrt(var + eps);
                for (std::size_t j = 0; j < cols; ++j)
                    yr[j] = gn[j] * ((xr[j] - mean) * inv) + bs[j];
            }
        },
        [rows, cols, eps](Tape& t, TensorNode& n) {
            const auto& xd = n.parents[0]->data;
            const auto& gn = n.parents[1]->data;
            const bool need_x = n.parents[0]->requires_grad;
            const bool need_g = n.parents[1]->requires_grad;
            const bool need_b = n.parents[2]->requires_grad;
            std::vector<double>* gx = need_x ? &t.grad_buf(*n.parents[0]) : nullptr;
            std::vector<double>* gg = need_g ? &t.grad_buf(*n.parents[1]) : nullptr;
            std::vector<double>* gb = need_b ? &t.grad_buf(*n.parents[2]) : nullptr;
            const double cn = static_cast<double>(cols);
            for (std::size_t i = 0; i < rows; ++i) {
                const double* xr = xd.data() + i * cols;
                const double* gr = n.grad.data() + i * cols;
                double mean = 0.0;
                for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
                mean /= cn;
                double var = 0.0;
                for (std::size_t j = 0; j < cols; ++j) {
                    const double d = xr[j] - mean;
                    var += d * d;
                }
                var /= cn;
                const double inv = 1.0 / std::sqrt(var + eps);
                if (need_g || need_b) {
                    for (std::size_t j = 0; j < cols; ++j) {
                        const double xhat = (xr[j] - mean) * inv;
                        if (gg) (*gg)[j] += gr[j] * xhat;
                        if (gb) (*gb)[j] += gr[j];
                    }
                }
                if (need_x) {
                    // gx = inv * (gh - mean(gh) - xhat * mean(gh * xhat)),
                    // with gh = g * gain.
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) {
                        const double gh = gr[j] * gn[j];
                        const double xhat = (xr[j] - mean) * inv;
                        s1 += gh;
                        s2 += gh * xhat;
                    }
                    s1 /= cn;
                    s2 /= cn;
                    double* gxr = gx->data() + i * cols;
                    for (std::size_t j = 0; j < cols; ++j) {
                        const double gh = gr[j] * gn[j];
                        const double xhat = (xr[j] - mean) * inv;
                        gxr[j] += inv * (gh - s1 - xhat * s2);
                    }
                }
            }
        });
}

Tensor gelu(const Tensor& x) {
    return make_op(
        "gelu", x.shape(), {x.node_ptr()},
        [](TensorNode& n) {
            const auto& xd = n.parents[0]->data;
            for (std::size_t i = 0; i < n.data.size(); ++i) {
                const double v = xd[i];
                n.data[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
            }
        },
        [](Tape& t, TensorNode& n) {
            if (!n.parents[0]->requires_grad) return;
            const auto& xd = n.parents[0]->data;
            auto& pg = t.grad_buf(*n.parents[0]);
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                const double v = xd[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                pg[i] += n.grad[i] * (cdf + v * pdf);
            }
        });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    check(table.rank() == 2, "embedding table must be rank 2, got " + shape_str(table.shape()));
    const int V = table.dim(0), D = table.dim(1);
    for (int id : ids)
        check(id >= 0 && id < V,
              "embedding id " + std::to_string(id) + " out of range for table " +
                  shape_str(table.shape()));
    const int T = static_cast<int>(ids.size());
    return make_op(
        "embedding", {T, D}, {table.node_ptr()},
        [ids, D](TensorNode& n) {
            const auto& tab = n.parents[0]->data;
            for (std::size_t t = 0; t < ids.size(); ++t)
                std::copy_n(tab.data() + static_cast<std::size_t>(ids[t]) * D, D,
                            n.data.data() + t * D);
        },
        [ids, D](Tape& t, TensorNode& n) {
            if (!n.parents[0]->requires_grad) return;
            auto& pg = t.grad_buf(*n.parents[0]);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const double* gr = n.grad.data() + i * D;
                double* dst = pg.data() + static_cast<std::size_t>(ids[i]) * D;
                for (int j = 0; j < D; ++j) dst[j] += gr[j];
            }
        });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<bool>& mask) {
    check(logits.rank() == 2, "cross_entropy expects [T x V] logits, got " +
                                  shape_str(logits.shape()));
    const int T = logits.dim(0), V = logits.dim(1);
    check(static_cast<int>(targets.size()) == T, "cross_entropy: targets length " +
                                                     std::to_string(targets.size()) +
                                                     " vs T=" + std::to_string(T));
    check(static_cast<int>(mask.size()) == T, "cross_entropy: mask length " +
                                                  std::to_string(mask.size()) +
                                                  " vs T=" + std::to_string(T));
    std::size_t m = 0;
    for (int t = 0; t < T; ++t) {
        if (!mask[t]) continue;
        ++m;
        check(targets[t] >= 0 && targets[t] < V,
              "cross_entropy: target id " + std::to_string(targets[t]) + " outside vocab " +
                  std::to_string(V));
    }
    if (m == 0) throw UsageError("cross_entropy: mask selects no positions");
    const double invm = 1.0 / static_cast<double>(m);
    return make_op(
        "cross_entropy", Shape{}, {logits.node_ptr()},
        [targets, mask, T, V, invm](TensorNode& n) {
            const auto& lg = n.parents[0]->data;
            double loss = 0.0;
            for (int t = 0; t < T; ++t) {
                if (!mask[t]) continue;
                const double* row = lg.data() + static_cast<std::size_t>(t) * V;
                double mx = row[0];
                for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
                double s = 0.0;
                for (int j = 0; j < V; ++j) s += std::exp(row[j] - mx);
                loss += (std::log(s) + mx) - row[targets[t]];
            }
            n.data[0] = loss * invm;
        },
        [targets, mask, T, V, invm](Tape& tp, TensorNode& n) {
            if (!n.parents[0]->requires_grad) return;
            const double g = n.grad[0] * invm;
            const auto& lg = n.parents[0]->data;
            auto& pg = tp.grad_buf(*n.parents[0]);
            for (int t = 0; t < T; ++t) {
                if (!mask[t]) continue;
                const double* row = lg.data() + static_cast<std::size_t>(t) * V;
                double* gr = pg.data() + static_cast<std::size_t>(t) * V;
                double mx = row[0];
                for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
                double s = 0.0;
                for (int j = 0; j < V; ++j) s += std::exp(row[j] - mx);
                const double inv = 1.0 / s;
                for (int j = 0; j < V; ++j) gr[j] += g * std::exp(row[j] - mx) * inv;
                gr[targets[t]] -= g;
            }
        });
}

Tensor slice_cols(const Tensor& x, int start, int count) {
    check(x.rank() == 2, "slice_cols expects rank 2, got " + shape_str(x.shape()));
    check(start >= 0 && count >= 1 && start + count <= x.dim(1),
          "slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
              ") outside " + shape_str(x.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    return make_op(
        "slice_cols", {rows, count}, {x.node_ptr()},
        [start, count, rows, cols](TensorNode& n) {
            const auto& xd = n.parents[0]->data;
            for (int i = 0; i < rows; ++i)
                std::copy_n(xd.data() + static_cast<std::size_t>(i) * cols + start, count,
                            n.data.data() + static_cast<std::size_t>(i) * count);
        },
        [start, count, rows, cols](Tape& t, TensorNode& n) {
            if (!n.parents[0]->requires_grad) return;
            auto& pg = t.grad_buf(*n.parents[0]);
            for (int i = 0; i < rows; ++i) {
                const double* gr = n.grad.data() + static_cast<std::size_t>(i) * count;
                double* dst = pg.data() + static_cast<std::size_t>(i) * cols + start;
                for (int j = 0; j < count; ++j) dst[j] += gr[j];
            }
        });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    check(!parts.empty(), "concat_cols: no parts");
    const int rows = parts[0].dim(0);
    int total = 0;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::vector<int> widths;
    for (const auto& p : parts) {
        check(p.rank() == 2 && p.dim(0) == rows,
              "concat_cols: part shape " + shape_str(p.shape()) + " does not share rows " +
                  std::to_string(rows));
        widths.push_back(p.dim(1));
        total += p.dim(1);
        parents.push_back(p.node_ptr());
    }
    return make_op(
        "concat_cols", {rows, total}, std::move(parents),
        [widths, rows, total](TensorNode& n) {
            int off = 0;
            for (std::size_t h = 0; h < widths.size(); ++h) {
                const auto& pd = n.parents[h]->data;
                for (int i = 0; i < rows; ++i)
                    std::copy_n(pd.data() + static_cast<std::size_t>(i) * widths[h], widths[h],
                                n.data.data() + static_cast<std::size_t>(i) * total + off);
                off += widths[h];
            }
        },
        [widths, rows, total](Tape& t, TensorNode& n) {
            int off = 0;
            for (std::size_t h = 0; h < widths.size(); ++h) {
                TensorNode& p = *n.parents[h];
                if (p.requires_grad) {
                    auto& pg = t.grad_buf(p);
                    for (int i = 0; i < rows; ++i) {
                        const double* gr =
                            n.grad.data() + static_cast<std::size_t>(i) * total + off;
                        double* dst = pg.data() + static_cast<std::size_t>(i) * widths[h];
                        for (int j = 0; j < widths[h]; ++j) dst[j] += gr[j];
                    }
                }
                off += widths[h];
            }
        });
}

Tensor attn_steer(const Tensor& a, const std::vector<double>& w, double alpha) {
    check(a.rank() == 2, "attn_steer expects rank 2, got " + shape_str(a.shape()));
    check(static_cast<int>(w.size()) == a.dim(1),
          "attn_steer: mask length " + std::to_string(w.size()) + " vs columns " +
              std::to_string(a.dim(1)));
    const std::size_t rows = static_cast<std::size_t>(a.dim(0));
    const std::size_t cols = w.size();
    std::vector<double> mult(cols);
    for (std::size_t j = 0; j < cols; ++j) mult[j] = w[j] > 0.5 ? alpha : 1.0;
    return make_op(
        "attn_steer", a.shape(), {a.node_ptr()},
        [mult, rows, cols](TensorNode& n) {
            const auto& xd = n.parents[0]->data;
            for (std::size_t i = 0; i < rows; ++i) {
                const double* xr = xd.data() + i * cols;
                double* yr = n.data.data() + i * cols;
                double s = 0.0;
                for (std::size_t j = 0; j < cols; ++j) {
                    yr[j] = mult[j] * xr[j];
                    s += yr[j];
                }
                assert(s > 0.0 && "attn_steer on a non-distribution row");
                const double inv = 1.0 / s;
                for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
            }
        },
        [mult, rows, cols](Tape& t, TensorNode& n) {
            if (!n.parents[0]->requires_grad) return;
            const auto& xd = n.parents[0]->data;
            auto& pg = t.grad_buf(*n.parents[0]);
            for (std::size_t i = 0; i < rows; ++i) {
                const double* xr = xd.data() + i * cols;
                const double* yr = n.data.data() + i * cols;
                const double* gr = n.grad.data() + i * cols;
                double s = 0.0, dot = 0.0;
                for (std::size_t j = 0; j < cols; ++j) s += mult[j] * xr[j];
                for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
                const double inv = 1.0 / s;
                double* gxr = pg.data() + i * cols;
                for (std::size_t j = 0; j < cols; ++j)
                    gxr[j] += mult[j] * inv * (gr[j] - dot);
            }
        });
}

Tensor sum(const Tensor& x) {
    return make_op(
        "sum", Shape{}, {x.node_ptr()},
        [](TensorNode& n) {
            double s = 0.0;
            for (double v : n.parents[0]->data) s += v;
            n.data[0] = s;
        },
        [](Tape& t, TensorNode& n) {
            if (!n.parents[0]->requires_grad) return;
            auto& pg = t.grad_buf(*n.parents[0]);
            const double g = n.grad[0];
            for (auto& v : pg) v += g;
        });
}

}  // namespace spanlab
