#pragma once

#include "ccnet/params.hpp"
#include "ccnet/tensor.hpp"

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace ccnet {

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Index dim(Index axis) const { return value().dim(axis); }
};

// Define-by-run gradient tape. Nodes are appended in execution order, so the
// append order is already a topological order; backward walks it in reverse
// and visits each node once.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Appends an op result. The backward closure is kept only if some input
    // needs a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
    Var record(Tensor value, std::span<const Var> inputs, Backward backward);

    const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
    bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

    // Zero-initialised on first access.
    Tensor& grad_slot(Var v);
    // Gradient after backward, zeros if the node received none.
    Tensor grad(Var v) const;

    // Accumulates `g` into v's gradient when v needs one.
    void accumulate(Var v, const Tensor& g);
    void accumulate(Var v, const Eigen::VectorXd& g);

    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool needs_grad = false;
        bool is_leaf = false;
        Backward backward;
    };
    std::deque<Node> nodes_;
};

// Binds every tensor of a ParamSet as a leaf on a tape.
class ParamVars {
public:
    ParamVars(Tape& tape, const ParamSet& params, bool requires_grad = true);

    Var operator[](std::string_view name) const;
    bool contains(std::string_view name) const { return params_->contains(name); }
    // Gradients keyed like the source ParamSet.
    ParamSet gradients() const;

private:
    Tape* tape_;
    const ParamSet* params_;
    std::vector<Var> vars_;
};

// Elementwise binary ops. `b` may equal a's shape, be a trailing suffix of it
// (repeated over the leading dims), or hold a single value.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);

// [m,k]x[k,n]. A rank>2 lhs against a 2-D rhs is flattened to rows first and
// keeps its leading dims; rank-3 x rank-3 is a batched product.
Var matmul(Var a, Var b);
// Swaps the last two axes.
Var transpose(Var a);

enum class Activation { gelu, relu };
Var gelu(Var a);
Var relu(Var a);
Var activate(Var a, Activation kind);
Var exp(Var a);
Var log(Var a);

// Softmax along `axis`, max-subtracted. When `mask` is given it must match
// the last two dims of `a`, the softmax runs over the last axis and entries
// with mask 0 get exactly zero weight.
Var softmax(Var a, Index axis = -1);
Var masked_softmax(Var a, const Tensor& mask);

Var sum(Var a, Index axis);
Var mean(Var a, Index axis);
Var sum_all(Var a);
Var mean_all(Var a);
Var dot(Var a, Var b);
Var l2norm(Var a, Index axis);

Var concat(std::span<const Var> parts, Index axis);
Var concat(std::initializer_list<Var> parts, Index axis);
Var slice(Var a, Index axis, Index start, Index length);
Var reshape(Var a, Shape shape);
// Rows of a (viewed as [rows, rest]) picked by index; backward scatter-adds.
Var gather_rows(Var a, std::vector<Index> rows);

// NHWC convolution patches: [B,H,W,C] -> [B*Ho*Wo, k*k*C], columns ordered
// (ky, kx, c). Zero padding.
Var im2col(Var x, Index kernel, Index stride, Index pad);
// 2x2 max pooling on NHWC, stride 2.
Var maxpool2(Var x);

// Mean negative log-likelihood of the labelled class given probabilities [B,C].
Var nll(Var probs, std::span<const int> labels);
// Mean cross-entropy of softmax(logits) against labels.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

// Plain-tensor conveniences built on the same kernels.
Tensor softmax(const Tensor& a, Index axis = -1);
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace ccnet
