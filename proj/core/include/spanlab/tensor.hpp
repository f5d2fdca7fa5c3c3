#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "spanlab/rng.hpp"

namespace spanlab {

using Shape = std::vector<int>;

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

class Tape;

// One value in the computation graph. Interior nodes carry closures that
// recompute their forward value from parents and push gradients back.
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty means "absent"
    bool requires_grad = false;
    bool leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> recompute;
    std::function<void(Tape&, TensorNode&)> backprop;

    std::size_t numel() const { return data.size(); }
};

// Value-semantic handle to a graph node. Data is 64-bit floats, row-major.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(std::size_t i) const { return node_->shape[i]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::size_t numel() const { return node_->data.size(); }

    const std::vector<double>& data() const& { return node_->data; }
    // On a temporary the storage would dangle, so hand out a copy instead.
    std::vector<double> data() const&& { return node_->data; }
    // Mutable access to leaf storage (parameter updates, test setup).
    std::vector<double>& raw() { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const&;
    std::vector<double> grad() const&& { return grad(); }
    std::vector<double>& grad_mut();
    void zero_grad() { node_->grad.clear(); }

    double item() const;

    TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

    static Tensor wrap(std::shared_ptr<TensorNode> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<TensorNode> node_;
};

// External destination for leaf gradients, used when several workers each
// run backward over their own tapes and the caller merges contributions in
// a fixed order afterwards.
class GradSink {
public:
    std::vector<double>& buffer(TensorNode* leaf, std::size_t n) {
        auto& buf = bufs_[leaf];
        if (buf.size() != n) buf.assign(n, 0.0);
        return buf;
    }
    const std::vector<double>* find(TensorNode* leaf) const {
        auto it = bufs_.find(leaf);
        return it == bufs_.end() ? nullptr : &it->second;
    }
    void clear() { bufs_.clear(); }

private:
    std::unordered_map<TensorNode*, std::vector<double>> bufs_;
};

// Ordered record of the primitive ops run while the tape was active on the
// current thread. Confined to one thread; backward() may be called once per
// reset cycle.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Reverse accumulation from a scalar loss. When `sink` is given, leaf
    // gradients go to the sink instead of the leaves' own grad buffers.
    void backward(const Tensor& loss, GradSink* sink = nullptr);

    // Clears grads of recorded nodes and re-arms backward().
    void reset();

    // Recomputes every recorded output from current leaf data, in order.
    void replay();

    std::size_t size() const { return records_.size(); }

    void record(std::shared_ptr<TensorNode> node) { records_.push_back(std::move(node)); }
    std::vector<double>& grad_buf(TensorNode& n);

    static Tape* active();

private:
    std::vector<std::shared_ptr<TensorNode>> records_;
    GradSink* sink_ = nullptr;
    bool backward_done_ = false;
};

// ---- primitive operations -------------------------------------------------
// Every op validates shapes eagerly and, when a tape is active, records a
// node with forward-replay and backward closures.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
// a [m x k] times b-transposed, b given as [n x k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// Multiplies row i (first dimension) by w[i]; w is a constant, not a graph input.
Tensor row_scale(const Tensor& a, const std::vector<double>& w);
// Multiplies entry [..., j] by w[j] over the last dimension.
Tensor col_scale(const Tensor& a, const std::vector<double>& w);
Tensor softmax_lastdim(const Tensor& x);
// Square [T x T] scores; row i is softmaxed over columns j <= i, rest zero.
Tensor causal_softmax(const Tensor& x);
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor gelu(const Tensor& x);
Tensor embedding(const Tensor& table, const std::vector<int>& ids);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<bool>& mask);
Tensor slice_cols(const Tensor& x, int start, int count);
Tensor concat_cols(const std::vector<Tensor>& parts);
// Post-softmax emphasis: rescales columns with w[j] != 0 by alpha, then
// renormalizes each row to sum 1.
Tensor attn_steer(const Tensor& a, const std::vector<double>& w, double alpha);
Tensor sum(const Tensor& x);

}  // namespace spanlab
