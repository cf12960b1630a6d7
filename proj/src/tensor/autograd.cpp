#include "ccnet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace ccnet {

const Tensor& Var::value() const {
    if (!tape) throw std::logic_error("unbound Var");
    return tape->value(*this);
}

// ---------------------------------------------------------------- tape

Var Tape::leaf(Tensor value, bool requires_grad) {
    value.set_requires_grad(requires_grad);
    Node node;
    node.value = std::move(value);
    node.needs_grad = requires_grad;
    node.is_leaf = true;
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
    Node node;
    for (const Var& in : inputs) {
        if (in.tape != this) throw std::logic_error("op mixes Vars from different tapes");
        node.needs_grad = node.needs_grad || needs_grad(in);
    }
    node.value = std::move(value);
    if (node.needs_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Tape::grad_slot(Var v) {
    Node& node = nodes_[static_cast<std::size_t>(v.id)];
    if (!node.has_grad) {
        node.grad = Tensor(node.value.shape(), 0.0);
        node.has_grad = true;
    }
    return node.grad;
}

Tensor Tape::grad(Var v) const {
    const Node& node = nodes_[static_cast<std::size_t>(v.id)];
    if (node.has_grad) return node.grad;
    return Tensor(node.value.shape(), 0.0);
}

void Tape::accumulate(Var v, const Eigen::VectorXd& g) {
    if (!needs_grad(v)) return;
    grad_slot(v).data() += g;
}

void Tape::accumulate(Var v, const Tensor& g) { accumulate(v, g.data()); }

void Tape::backward(Var loss) {
    if (loss.tape != this) throw std::logic_error("loss is not on this tape");
    if (value(loss).numel() != 1) {
        throw std::invalid_argument("backward needs a scalar loss, got shape " + to_string(value(loss).shape()));
    }
    for (auto& node : nodes_) {
        node.has_grad = false;
        node.grad = Tensor();
    }
    for (auto& node : nodes_) {
        if (node.is_leaf && node.needs_grad) {
            node.grad = Tensor(node.value.shape(), 0.0);
            node.has_grad = true;
        }
    }
    grad_slot(loss).data().setOnes();
    for (int i = loss.id; i >= 0; --i) {
        Node& node = nodes_[static_cast<std::size_t>(i)];
        if (node.backward && node.has_grad) node.backward(*this, node.grad);
    }
}

ParamVars::ParamVars(Tape& tape, const ParamSet& params, bool requires_grad) : tape_(&tape), params_(&params) {
    vars_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) vars_.push_back(tape.leaf(params.tensor(i), requires_grad));
}

Var ParamVars::operator[](std::string_view name) const {
    const auto& names = params_->names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return vars_[i];
    }
    throw std::out_of_range("unknown parameter: " + std::string(name));
}

ParamSet ParamVars::gradients() const {
    ParamSet out;
    for (std::size_t i = 0; i < vars_.size(); ++i) out.add(params_->names()[i], tape_->grad(vars_[i]));
    return out;
}

// ---------------------------------------------------------------- helpers

namespace {

Tape& tape_of(Var a) {
    if (!a.tape) throw std::logic_error("unbound Var");
    return *a.tape;
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

Index normalize_axis(Index axis, Index rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw std::invalid_argument("axis out of range");
    return axis;
}

enum class Broadcast { same, suffix, scalar };

Broadcast broadcast_kind(const char* op, const Shape& a, const Shape& b) {
    if (a == b) return Broadcast::same;
    if (numel(b) == 1) return Broadcast::scalar;
    if (b.size() <= a.size() && std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()))) {
        return Broadcast::suffix;
    }
    shape_error(op, a, b);
}

// Repeats b's values to a's length.
Eigen::VectorXd expand(const Tensor& b, Index n, Broadcast kind) {
    switch (kind) {
        case Broadcast::same: return b.data();
        case Broadcast::scalar: return Eigen::VectorXd::Constant(n, b[0]);
        case Broadcast::suffix: return b.data().replicate(n / b.numel(), 1);
    }
    return {};
}

// Sums a full-length gradient back down to b's layout.
Eigen::VectorXd reduce_to(const Eigen::VectorXd& g, Index b_numel, Broadcast kind) {
    switch (kind) {
        case Broadcast::same: return g;
        case Broadcast::scalar: return Eigen::VectorXd::Constant(1, g.sum());
        case Broadcast::suffix: {
            const Index reps = g.size() / b_numel;
            ConstMatrixMap m(g.data(), reps, b_numel);
            return m.colwise().sum().transpose();
        }
    }
    return {};
}

struct AxisSplit {
    Index outer, n, inner;
};

AxisSplit split_at(const Shape& shape, Index axis) {
    AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
    for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
    for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) s.inner *= shape[static_cast<std::size_t>(i)];
    return s;
}

Shape drop_axis(const Shape& shape, Index axis) {
    Shape out = shape;
    out.erase(out.begin() + axis);
    return out;
}

void softmax_rows(const double* in, double* out, Index outer, Index n, Index inner) {
    for (Index o = 0; o < outer; ++o) {
        for (Index j = 0; j < inner; ++j) {
            const double* x = in + o * n * inner + j;
            double* y = out + o * n * inner + j;
            double m = -std::numeric_limits<double>::infinity();
            for (Index k = 0; k < n; ++k) m = std::max(m, x[k * inner]);
            double total = 0.0;
            for (Index k = 0; k < n; ++k) {
                y[k * inner] = std::exp(x[k * inner] - m);
                total += y[k * inner];
            }
            for (Index k = 0; k < n; ++k) y[k * inner] /= total;
        }
    }
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Broadcast kind = broadcast_kind("add", av.shape(), bv.shape());
    Tensor out(av.shape(), av.data() + expand(bv, av.numel(), kind));
    const Index bn = bv.numel();
    return tape.record(std::move(out), {a, b}, [a, b, kind, bn](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        if (t.needs_grad(b)) t.accumulate(b, reduce_to(g.data(), bn, kind));
    });
}

Var sub(Var a, Var b) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Broadcast kind = broadcast_kind("sub", av.shape(), bv.shape());
    Tensor out(av.shape(), av.data() - expand(bv, av.numel(), kind));
    const Index bn = bv.numel();
    return tape.record(std::move(out), {a, b}, [a, b, kind, bn](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        if (t.needs_grad(b)) t.accumulate(b, Eigen::VectorXd(-reduce_to(g.data(), bn, kind)));
    });
}

Var mul(Var a, Var b) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Broadcast kind = broadcast_kind("mul", av.shape(), bv.shape());
    Tensor out(av.shape(), av.data().cwiseProduct(expand(bv, av.numel(), kind)));
    const Index bn = bv.numel();
    return tape.record(std::move(out), {a, b}, [a, b, kind, bn](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        if (t.needs_grad(a)) t.accumulate(a, Eigen::VectorXd(g.data().cwiseProduct(expand(bv, av.numel(), kind))));
        if (t.needs_grad(b)) t.accumulate(b, reduce_to(g.data().cwiseProduct(av.data()), bn, kind));
    });
}

Var scale(Var a, double factor) {
    Tape& tape = tape_of(a);
    Tensor out(a.shape(), a.value().data() * factor);
    return tape.record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
        t.accumulate(a, Eigen::VectorXd(g.data() * factor));
    });
}

// ---------------------------------------------------------------- products

Var matmul(Var a, Var b) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() < 2 || bv.rank() < 2) shape_error("matmul", av.shape(), bv.shape());

    if (bv.rank() == 2) {
        const Index k = av.dim(-1);
        if (k != bv.dim(0)) shape_error("matmul", av.shape(), bv.shape());
        const Index rows = av.numel() / k;
        const Index n = bv.dim(1);
        Shape out_shape = av.shape();
        out_shape.back() = n;
        Tensor out(out_shape);
        out.matrix(rows, n).noalias() = av.matrix(rows, k) * bv.matrix(k, n);
        return tape.record(std::move(out), {a, b}, [a, b, rows, k, n](Tape& t, const Tensor& g) {
            ConstMatrixMap gm = g.matrix(rows, n);
            if (t.needs_grad(a)) {
                Tensor& ga = t.grad_slot(a);
                ga.matrix(rows, k).noalias() += gm * t.value(b).matrix(k, n).transpose();
            }
            if (t.needs_grad(b)) {
                Tensor& gb = t.grad_slot(b);
                gb.matrix(k, n).noalias() += t.value(a).matrix(rows, k).transpose() * gm;
            }
        });
    }

    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
        shape_error("matmul", av.shape(), bv.shape());
    }
    const Index batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
    Tensor out(Shape{batch, m, n});
    for (Index i = 0; i < batch; ++i) {
        MatrixMap(out.raw() + i * m * n, m, n).noalias() =
            ConstMatrixMap(av.raw() + i * m * k, m, k) * ConstMatrixMap(bv.raw() + i * k * n, k, n);
    }
    return tape.record(std::move(out), {a, b}, [a, b, batch, m, k, n](Tape& t, const Tensor& g) {
        const bool need_a = t.needs_grad(a), need_b = t.needs_grad(b);
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        for (Index i = 0; i < batch; ++i) {
            ConstMatrixMap gm(g.raw() + i * m * n, m, n);
            if (need_a) {
                MatrixMap(t.grad_slot(a).raw() + i * m * k, m, k).noalias() +=
                    gm * ConstMatrixMap(bv.raw() + i * k * n, k, n).transpose();
            }
            if (need_b) {
                MatrixMap(t.grad_slot(b).raw() + i * k * n, k, n).noalias() +=
                    ConstMatrixMap(av.raw() + i * m * k, m, k).transpose() * gm;
            }
        }
    });
}

Var transpose(Var a) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    if (av.rank() < 2) throw std::invalid_argument("transpose needs rank >= 2, got " + to_string(av.shape()));
    const Index m = av.dim(-2), n = av.dim(-1), batch = av.numel() / (m * n);
    Shape out_shape = av.shape();
    std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
    Tensor out(out_shape);
    for (Index i = 0; i < batch; ++i) {
        MatrixMap(out.raw() + i * m * n, n, m) = ConstMatrixMap(av.raw() + i * m * n, m, n).transpose();
    }
    return tape.record(std::move(out), {a}, [a, m, n, batch](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(a);
        for (Index i = 0; i < batch; ++i) {
            MatrixMap(ga.raw() + i * m * n, m, n) += ConstMatrixMap(g.raw() + i * m * n, n, m).transpose();
        }
    });
}

Var dot(Var a, Var b) {
    Tape& tape = tape_of(a);
    if (a.value().numel() != b.value().numel()) shape_error("dot", a.shape(), b.shape());
    Tensor out = Tensor::scalar(a.value().data().dot(b.value().data()));
    return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.needs_grad(a)) t.accumulate(a, Eigen::VectorXd(t.value(b).data() * g[0]));
        if (t.needs_grad(b)) t.accumulate(b, Eigen::VectorXd(t.value(a).data() * g[0]));
    });
}

// ---------------------------------------------------------------- nonlinearities

Var gelu(Var a) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (Index i = 0; i < av.numel(); ++i) {
        const double x = av[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    }
    return tape.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        Tensor& ga = t.grad_slot(a);
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (Index i = 0; i < av.numel(); ++i) {
            const double x = av[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
            ga[i] += g[i] * (cdf + x * pdf);
        }
    });
}

Var relu(Var a) {
    Tape& tape = tape_of(a);
    Tensor out(a.shape(), a.value().data().cwiseMax(0.0));
    return tape.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        Tensor& ga = t.grad_slot(a);
        for (Index i = 0; i < av.numel(); ++i) {
            if (av[i] > 0.0) ga[i] += g[i];
        }
    });
}

Var activate(Var a, Activation kind) { return kind == Activation::gelu ? gelu(a) : relu(a); }

Var exp(Var a) {
    Tape& tape = tape_of(a);
    Tensor out(a.shape(), a.value().data().array().exp().matrix());
    return tape.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        t.accumulate(a, Eigen::VectorXd(g.data().array() * t.value(a).data().array().exp()));
    });
}

Var log(Var a) {
    Tape& tape = tape_of(a);
    Tensor out(a.shape(), a.value().data().array().log().matrix());
    return tape.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        t.accumulate(a, Eigen::VectorXd(g.data().array() / t.value(a).data().array()));
    });
}

// ---------------------------------------------------------------- softmax

Tensor softmax(const Tensor& a, Index axis) {
    axis = normalize_axis(axis, a.rank());
    const AxisSplit s = split_at(a.shape(), axis);
    Tensor out(a.shape());
    softmax_rows(a.raw(), out.raw(), s.outer, s.n, s.inner);
    return out;
}

Var softmax(Var a, Index axis) {
    Tape& tape = tape_of(a);
    axis = normalize_axis(axis, a.value().rank());
    const AxisSplit s = split_at(a.shape(), axis);
    Tensor out = softmax(a.value(), axis);
    Tensor saved = out;
    return tape.record(std::move(out), {a}, [a, s, y = std::move(saved)](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(a);
        for (Index o = 0; o < s.outer; ++o) {
            for (Index j = 0; j < s.inner; ++j) {
                const Index base = o * s.n * s.inner + j;
                double inner = 0.0;
                for (Index k = 0; k < s.n; ++k) inner += g[base + k * s.inner] * y[base + k * s.inner];
                for (Index k = 0; k < s.n; ++k) {
                    const Index idx = base + k * s.inner;
                    ga[idx] += y[idx] * (g[idx] - inner);
                }
            }
        }
    });
}

Var masked_softmax(Var a, const Tensor& mask) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    if (mask.rank() != 2 || av.rank() < 2 || av.dim(-2) != mask.dim(0) || av.dim(-1) != mask.dim(1)) {
        shape_error("masked_softmax", av.shape(), mask.shape());
    }
    const Index m = mask.dim(0), n = mask.dim(1), rows = av.numel() / n;
    Tensor out(av.shape(), 0.0);
    for (Index r = 0; r < rows; ++r) {
        const double* x = av.raw() + r * n;
        const double* keep = mask.raw() + (r % m) * n;
        double* y = out.raw() + r * n;
        double top = -std::numeric_limits<double>::infinity();
        for (Index k = 0; k < n; ++k) {
            if (keep[k] != 0.0) top = std::max(top, x[k]);
        }
        if (!std::isfinite(top)) throw std::invalid_argument("masked_softmax: row with no unmasked entry");
        double total = 0.0;
        for (Index k = 0; k < n; ++k) {
            if (keep[k] != 0.0) {
                y[k] = std::exp(x[k] - top);
                total += y[k];
            }
        }
        for (Index k = 0; k < n; ++k) y[k] /= total;
    }
    Tensor saved = out;
    return tape.record(std::move(out), {a}, [a, y = std::move(saved), rows, n](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(a);
        for (Index r = 0; r < rows; ++r) {
            double inner = 0.0;
            for (Index k = 0; k < n; ++k) inner += g[r * n + k] * y[r * n + k];
            for (Index k = 0; k < n; ++k) ga[r * n + k] += y[r * n + k] * (g[r * n + k] - inner);
        }
    });
}

// ---------------------------------------------------------------- reductions

Var sum(Var a, Index axis) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    axis = normalize_axis(axis, av.rank());
    const AxisSplit s = split_at(av.shape(), axis);
    Tensor out(drop_axis(av.shape(), axis), 0.0);
    for (Index o = 0; o < s.outer; ++o) {
        for (Index k = 0; k < s.n; ++k) {
            for (Index j = 0; j < s.inner; ++j) out[o * s.inner + j] += av[(o * s.n + k) * s.inner + j];
        }
    }
    return tape.record(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(a);
        for (Index o = 0; o < s.outer; ++o) {
            for (Index k = 0; k < s.n; ++k) {
                for (Index j = 0; j < s.inner; ++j) ga[(o * s.n + k) * s.inner + j] += g[o * s.inner + j];
            }
        }
    });
}

Var mean(Var a, Index axis) {
    const Index n = a.value().dim(axis);
    return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}

Var sum_all(Var a) {
    Tape& tape = tape_of(a);
    Tensor out = Tensor::scalar(a.value().data().sum());
    return tape.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        t.grad_slot(a).data().array() += g[0];
    });
}

Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().numel())); }

Var l2norm(Var a, Index axis) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    axis = normalize_axis(axis, av.rank());
    const AxisSplit s = split_at(av.shape(), axis);
    Tensor out(drop_axis(av.shape(), axis), 0.0);
    for (Index o = 0; o < s.outer; ++o) {
        for (Index j = 0; j < s.inner; ++j) {
            double total = 0.0;
            for (Index k = 0; k < s.n; ++k) {
                const double x = av[(o * s.n + k) * s.inner + j];
                total += x * x;
            }
            out[o * s.inner + j] = std::sqrt(total);
        }
    }
    Tensor norms = out;
    return tape.record(std::move(out), {a}, [a, s, norms = std::move(norms)](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        Tensor& ga = t.grad_slot(a);
        for (Index o = 0; o < s.outer; ++o) {
            for (Index j = 0; j < s.inner; ++j) {
                const double norm = norms[o * s.inner + j];
                if (norm == 0.0) continue;
                for (Index k = 0; k < s.n; ++k) {
                    const Index idx = (o * s.n + k) * s.inner + j;
                    ga[idx] += g[o * s.inner + j] * av[idx] / norm;
                }
            }
        }
    });
}

// ---------------------------------------------------------------- layout

Var concat(std::span<const Var> parts, Index axis) {
    if (parts.empty()) throw std::invalid_argument("concat of nothing");
    Tape& tape = tape_of(parts[0]);
    const Shape& first = parts[0].shape();
    axis = normalize_axis(axis, static_cast<Index>(first.size()));
    Shape out_shape = first;
    out_shape[static_cast<std::size_t>(axis)] = 0;
    std::vector<Index> widths;
    for (const Var& p : parts) {
        const Shape& ps = p.shape();
        if (ps.size() != first.size()) shape_error("concat", first, ps);
        for (std::size_t d = 0; d < ps.size(); ++d) {
            if (static_cast<Index>(d) != axis && ps[d] != first[d]) shape_error("concat", first, ps);
        }
        out_shape[static_cast<std::size_t>(axis)] += ps[static_cast<std::size_t>(axis)];
        widths.push_back(ps[static_cast<std::size_t>(axis)]);
    }
    const AxisSplit s = split_at(out_shape, axis);
    Tensor out(out_shape);
    Index offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Tensor& pv = parts[p].value();
        const Index chunk = widths[p] * s.inner;
        for (Index o = 0; o < s.outer; ++o) {
            std::copy_n(pv.raw() + o * chunk, chunk, out.raw() + o * s.n * s.inner + offset * s.inner);
        }
        offset += widths[p];
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape.record(std::move(out), parts, [inputs, widths, s](Tape& t, const Tensor& g) {
        Index offset = 0;
        for (std::size_t p = 0; p < inputs.size(); ++p) {
            const Index chunk = widths[p] * s.inner;
            if (t.needs_grad(inputs[p])) {
                Tensor& gp = t.grad_slot(inputs[p]);
                for (Index o = 0; o < s.outer; ++o) {
                    const double* src = g.raw() + o * s.n * s.inner + offset * s.inner;
                    double* dst = gp.raw() + o * chunk;
                    for (Index i = 0; i < chunk; ++i) dst[i] += src[i];
                }
            }
            offset += widths[p];
        }
    });
}

Var concat(std::initializer_list<Var> parts, Index axis) {
    return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(Var a, Index axis, Index start, Index length) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    axis = normalize_axis(axis, av.rank());
    const AxisSplit s = split_at(av.shape(), axis);
    if (start < 0 || length <= 0 || start + length > s.n) {
        throw std::invalid_argument("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                                    ") out of range for shape " + to_string(av.shape()));
    }
    Shape out_shape = av.shape();
    out_shape[static_cast<std::size_t>(axis)] = length;
    Tensor out(out_shape);
    const Index chunk = length * s.inner;
    for (Index o = 0; o < s.outer; ++o) {
        std::copy_n(av.raw() + (o * s.n + start) * s.inner, chunk, out.raw() + o * chunk);
    }
    return tape.record(std::move(out), {a}, [a, s, start, chunk](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(a);
        for (Index o = 0; o < s.outer; ++o) {
            double* dst = ga.raw() + (o * s.n + start) * s.inner;
            const double* src = g.raw() + o * chunk;
            for (Index i = 0; i < chunk; ++i) dst[i] += src[i];
        }
    });
}

Var reshape(Var a, Shape shape) {
    Tape& tape = tape_of(a);
    Tensor out = a.value().reshaped(std::move(shape));
    return tape.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) { t.accumulate(a, g.data()); });
}

Var gather_rows(Var a, std::vector<Index> rows) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    if (av.rank() < 1) throw std::invalid_argument("gather_rows needs rank >= 1");
    const Index count = av.dim(0), width = av.numel() / count;
    Shape out_shape = av.shape();
    out_shape[0] = static_cast<Index>(rows.size());
    Tensor out(out_shape);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || rows[r] >= count) throw std::out_of_range("gather_rows index out of range");
        std::copy_n(av.raw() + rows[r] * width, width, out.raw() + static_cast<Index>(r) * width);
    }
    return tape.record(std::move(out), {a}, [a, rows = std::move(rows), width](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_slot(a);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            double* dst = ga.raw() + rows[r] * width;
            const double* src = g.raw() + static_cast<Index>(r) * width;
            for (Index i = 0; i < width; ++i) dst[i] += src[i];
        }
    });
}

// ---------------------------------------------------------------- convolution helpers

Var im2col(Var x, Index kernel, Index stride, Index pad) {
    Tape& tape = tape_of(x);
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw std::invalid_argument("im2col expects NHWC input, got " + to_string(xv.shape()));
    const Index batch = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
    if (h + 2 * pad < kernel || w + 2 * pad < kernel || (h + 2 * pad - kernel) % stride != 0 ||
        (w + 2 * pad - kernel) % stride != 0) {
        throw std::invalid_argument("im2col: input " + to_string(xv.shape()) + " not tiled by kernel " +
                                    std::to_string(kernel) + " stride " + std::to_string(stride));
    }
    const Index ho = (h + 2 * pad - kernel) / stride + 1;
    const Index wo = (w + 2 * pad - kernel) / stride + 1;
    const Index cols = kernel * kernel * c;
    Tensor out(Shape{batch * ho * wo, cols}, 0.0);
    // For every output element, the flat input offset or -1 for padding.
    std::vector<Index> source(static_cast<std::size_t>(out.numel()));
    Index e = 0;
    for (Index b = 0; b < batch; ++b) {
        for (Index oy = 0; oy < ho; ++oy) {
            for (Index ox = 0; ox < wo; ++ox) {
                for (Index ky = 0; ky < kernel; ++ky) {
                    const Index iy = oy * stride + ky - pad;
                    for (Index kx = 0; kx < kernel; ++kx) {
                        const Index ix = ox * stride + kx - pad;
                        const bool inside = iy >= 0 && iy < h && ix >= 0 && ix < w;
                        const Index base = ((b * h + iy) * w + ix) * c;
                        for (Index ch = 0; ch < c; ++ch, ++e) {
                            source[static_cast<std::size_t>(e)] = inside ? base + ch : -1;
                            if (inside) out[e] = xv[base + ch];
                        }
                    }
                }
            }
        }
    }
    return tape.record(std::move(out), {x}, [x, source = std::move(source)](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_slot(x);
        for (std::size_t i = 0; i < source.size(); ++i) {
            if (source[i] >= 0) gx[source[i]] += g[static_cast<Index>(i)];
        }
    });
}

Var maxpool2(Var x) {
    Tape& tape = tape_of(x);
    const Tensor& xv = x.value();
    if (xv.rank() != 4 || xv.dim(1) % 2 != 0 || xv.dim(2) % 2 != 0) {
        throw std::invalid_argument("maxpool2 expects NHWC with even H, W, got " + to_string(xv.shape()));
    }
    const Index batch = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
    Tensor out(Shape{batch, h / 2, w / 2, c});
    std::vector<Index> arg(static_cast<std::size_t>(out.numel()));
    Index e = 0;
    for (Index b = 0; b < batch; ++b) {
        for (Index oy = 0; oy < h / 2; ++oy) {
            for (Index ox = 0; ox < w / 2; ++ox) {
                for (Index ch = 0; ch < c; ++ch, ++e) {
                    Index best = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
                    for (Index dy = 0; dy < 2; ++dy) {
                        for (Index dx = 0; dx < 2; ++dx) {
                            const Index idx = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                            if (xv[idx] > xv[best]) best = idx;
                        }
                    }
                    arg[static_cast<std::size_t>(e)] = best;
                    out[e] = xv[best];
                }
            }
        }
    }
    return tape.record(std::move(out), {x}, [x, arg = std::move(arg)](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_slot(x);
        for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += g[static_cast<Index>(i)];
    });
}

// ---------------------------------------------------------------- losses

Var nll(Var probs, std::span<const int> labels) {
    Tape& tape = tape_of(probs);
    const Tensor& pv = probs.value();
    if (pv.rank() != 2 || pv.dim(0) != static_cast<Index>(labels.size())) {
        shape_error("nll", pv.shape(), Shape{static_cast<Index>(labels.size())});
    }
    const Index batch = pv.dim(0), classes = pv.dim(1);
    std::vector<int> ys(labels.begin(), labels.end());
    double total = 0.0;
    for (Index b = 0; b < batch; ++b) {
        if (ys[b] < 0 || ys[b] >= classes) throw std::out_of_range("label out of range");
        total -= std::log(pv[b * classes + ys[b]]);
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(batch));
    return tape.record(std::move(out), {probs}, [probs, ys = std::move(ys), batch, classes](Tape& t, const Tensor& g) {
        const Tensor& pv = t.value(probs);
        Tensor& gp = t.grad_slot(probs);
        for (Index b = 0; b < batch; ++b) {
            const Index idx = b * classes + ys[static_cast<std::size_t>(b)];
            gp[idx] -= g[0] / (static_cast<double>(batch) * pv[idx]);
        }
    });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    Tape& tape = tape_of(logits);
    const Tensor& lv = logits.value();
    if (lv.rank() != 2 || lv.dim(0) != static_cast<Index>(labels.size())) {
        shape_error("softmax_cross_entropy", lv.shape(), Shape{static_cast<Index>(labels.size())});
    }
    const Index batch = lv.dim(0), classes = lv.dim(1);
    Tensor probs = softmax(lv, 1);
    std::vector<int> ys(labels.begin(), labels.end());
    double total = 0.0;
    for (Index b = 0; b < batch; ++b) {
        if (ys[b] < 0 || ys[b] >= classes) throw std::out_of_range("label out of range");
        const double* row = lv.raw() + b * classes;
        const double top = *std::max_element(row, row + classes);
        double z = 0.0;
        for (Index c = 0; c < classes; ++c) z += std::exp(row[c] - top);
        total += std::log(z) + top - row[ys[b]];
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(batch));
    return tape.record(std::move(out), {logits},
                       [logits, probs = std::move(probs), ys = std::move(ys), batch, classes](Tape& t, const Tensor& g) {
                           Tensor& gl = t.grad_slot(logits);
                           const double w = g[0] / static_cast<double>(batch);
                           for (Index b = 0; b < batch; ++b) {
                               for (Index c = 0; c < classes; ++c) {
                                   const double onehot = c == ys[static_cast<std::size_t>(b)] ? 1.0 : 0.0;
                                   gl[b * classes + c] += w * (probs[b * classes + c] - onehot);
                               }
                           }
                       });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    Tape tape;
    return matmul(tape.constant(a), tape.constant(b)).value();
}

}  // namespace ccnet
