#include "cemlab/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

namespace cemlab {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
// Eigen's small-product and gemv kernels peel unaligned leading elements,
// so the summation order would depend on where std::vector put the data.
// Products therefore run on owned, aligned copies.
RowMatrix aligned_copy(const Array& a) {
    RowMatrix m(static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
    std::copy(a.data.begin(), a.data.end(), m.data());
    return m;
}

void accumulate(Array& dst, const RowMatrix& src) {
    const double* s = src.data();
    for (double& v : dst.data) v += *s++;
}

void check_same_tape(const DiffArray& a, const DiffArray& b, const char* op) {
    if (!a.valid() || !b.valid()) throw Error(std::string(op) + ": invalid operand");
    if (&a.tape() != &b.tape()) throw Error(std::string(op) + ": operands live on different tapes");
}

std::size_t broadcast_dim(std::size_t x, std::size_t y, const char* op, Shape a, Shape b) {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    throw Error(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

Shape broadcast_shape(Shape a, Shape b, const char* op) {
    return {broadcast_dim(a.rows, b.rows, op, a, b), broadcast_dim(a.cols, b.cols, op, a, b)};
}

// Row and column strides of an operand broadcast to the output shape.
struct Strides {
    std::size_t row;
    std::size_t col;
};

inline Strides strides_of(const Shape& s) { return {s.rows == 1 ? 0 : s.cols, s.cols == 1 ? std::size_t{0} : 1}; }

enum class BinaryKind { Add, Sub, Mul };

template <class Op>
void apply_broadcast(const Shape& out, double* o, const double* x, Strides sx, const double* y, Strides sy, Op op) {
    for (std::size_t r = 0; r < out.rows; ++r) {
        const double* xr = x + r * sx.row;
        const double* yr = y + r * sy.row;
        double* orow = o + r * out.cols;
        for (std::size_t c = 0; c < out.cols; ++c) orow[c] = op(xr[c * sx.col], yr[c * sy.col]);
    }
}

// Accumulates g (times `other` for Mul) into a gradient that may be broadcast.
void accumulate(const Array& g, Array& target, const Array* other, double sign) {
    const Shape gs = g.shape;
    const Strides st = strides_of(target.shape);
    if (other == nullptr && target.shape == gs) {
        for (std::size_t i = 0; i < g.size(); ++i) target.data[i] += sign * g.data[i];
        return;
    }
    const Strides so = other != nullptr ? strides_of(other->shape) : Strides{0, 0};
    for (std::size_t r = 0; r < gs.rows; ++r) {
        const double* gr = g.data.data() + r * gs.cols;
        double* tr = target.data.data() + r * st.row;
        if (other == nullptr) {
            for (std::size_t c = 0; c < gs.cols; ++c) tr[c * st.col] += sign * gr[c];
        } else {
            const double* orow = other->data.data() + r * so.row;
            for (std::size_t c = 0; c < gs.cols; ++c) tr[c * st.col] += gr[c] * orow[c * so.col];
        }
    }
}

DiffArray binary(const DiffArray& a, const DiffArray& b, BinaryKind kind, const char* name) {
    check_same_tape(a, b, name);
    const Array& av = a.value();
    const Array& bv = b.value();
    const Shape out_shape = broadcast_shape(av.shape, bv.shape, name);
    Array out(out_shape);
    const Strides sa = strides_of(av.shape);
    const Strides sb = strides_of(bv.shape);
    const double* x = av.data.data();
    const double* y = bv.data.data();
    switch (kind) {
        case BinaryKind::Add: apply_broadcast(out_shape, out.data.data(), x, sa, y, sb, std::plus<>()); break;
        case BinaryKind::Sub: apply_broadcast(out_shape, out.data.data(), x, sa, y, sb, std::minus<>()); break;
        case BinaryKind::Mul: apply_broadcast(out_shape, out.data.data(), x, sa, y, sb, std::multiplies<>()); break;
    }
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return a.tape().record(std::move(out), {ia, ib}, [ia, ib, kind](Tape& t, std::size_t self) {
        const Array& g = t.node(self).grad;
        const bool mul = kind == BinaryKind::Mul;
        if (t.node(ia).requires_grad) accumulate(g, t.grad_buffer(ia), mul ? &t.node(ib).value : nullptr, 1.0);
        if (t.node(ib).requires_grad) {
            accumulate(g, t.grad_buffer(ib), mul ? &t.node(ia).value : nullptr, kind == BinaryKind::Sub ? -1.0 : 1.0);
        }
    });
}

// Unary elementwise op whose derivative depends on (input, output).
template <typename Forward, typename Derivative>
DiffArray unary(const DiffArray& a, Forward f, Derivative df) {
    if (!a.valid()) throw Error("unary op on invalid operand");
    const Array& av = a.value();
    Array out(av.shape);
    for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = f(av.data[i]);
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [ia, df](Tape& t, std::size_t self) {
        const Tape::Node& n = t.node(self);
        const Array& x = t.node(ia).value;
        Array& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga.data[i] += n.grad.data[i] * df(x.data[i], n.value.data[i]);
        }
    });
}

}  // namespace

// ---------------------------------------------------------------- DiffArray

const Shape& DiffArray::shape() const { return tape_->node(id_).value.shape; }
const Array& DiffArray::value() const { return tape_->node(id_).value; }
const Array& DiffArray::grad() const { return tape_->grad_buffer(id_); }
bool DiffArray::requires_grad() const { return tape_->node(id_).requires_grad; }

// --------------------------------------------------------------------- Tape

DiffArray Tape::variable(Array value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return DiffArray(this, nodes_.size() - 1);
}

DiffArray Tape::constant(Array value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return DiffArray(this, nodes_.size() - 1);
}

DiffArray Tape::record(Array value, std::vector<std::size_t> parents, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                  [this](std::size_t p) { return nodes_[p].requires_grad; });
    if (n.requires_grad) {
        n.parents = std::move(parents);
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return DiffArray(this, nodes_.size() - 1);
}

Array& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.shape != n.value.shape) n.grad = Array(n.value.shape, 0.0);
    return n.grad;
}

void Tape::backward(const DiffArray& root) {
    if (!root.valid() || &root.tape() != this) throw Error("backward: root not on this tape");
    if (root.shape() != Shape{1, 1}) {
        throw Error("backward: root must be scalar, got " + root.shape().str());
    }
    for (Node& n : nodes_) n.grad = Array();
    grad_buffer(root.id()).data[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || n.grad.empty()) continue;
        n.backward(*this, i);
    }
}

// ---------------------------------------------------------------------- ops

DiffArray add(const DiffArray& a, const DiffArray& b) { return binary(a, b, BinaryKind::Add, "add"); }
DiffArray sub(const DiffArray& a, const DiffArray& b) { return binary(a, b, BinaryKind::Sub, "sub"); }
DiffArray mul(const DiffArray& a, const DiffArray& b) { return binary(a, b, BinaryKind::Mul, "mul"); }

DiffArray scale(const DiffArray& a, double factor, double offset) {
    return unary(
        a, [factor, offset](double x) { return factor * x + offset; },
        [factor](double, double) { return factor; });
}

DiffArray matmul(const DiffArray& a, const DiffArray& b) {
    check_same_tape(a, b, "matmul");
    const Array& av = a.value();
    const Array& bv = b.value();
    if (av.cols() != bv.rows()) {
        throw Error("matmul: inner dimensions differ, " + av.shape.str() + " x " + bv.shape.str());
    }
    RowMatrix prod;
    prod.noalias() = aligned_copy(av) * aligned_copy(bv);
    Array out({av.rows(), bv.cols()});
    std::copy(prod.data(), prod.data() + prod.size(), out.data.begin());
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        const Array& g = t.node(self).grad;
        if (t.node(ia).requires_grad) {
            Array& ga = t.grad_buffer(ia);
            RowMatrix d;
            d.noalias() = aligned_copy(g) * aligned_copy(t.node(ib).value).transpose();
            accumulate(ga, d);
        }
        if (t.node(ib).requires_grad) {
            Array& gb = t.grad_buffer(ib);
            RowMatrix d;
            d.noalias() = aligned_copy(t.node(ia).value).transpose() * aligned_copy(g);
            accumulate(gb, d);
        }
    });
}

DiffArray leaky_relu(const DiffArray& a, double slope) {
    return unary(
        a, [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

DiffArray sigmoid(const DiffArray& a) {
    return unary(
        a, [](double x) { return stable_sigmoid(x); },
        [](double, double y) { return y * (1.0 - y); });
}

DiffArray concat(std::span<const DiffArray> parts) {
    if (parts.empty()) throw Error("concat: no operands");
    const std::size_t rows = parts.front().shape().rows;
    std::size_t cols = 0;
    std::vector<std::size_t> ids;
    std::vector<std::size_t> offsets;
    for (const DiffArray& p : parts) {
        check_same_tape(parts.front(), p, "concat");
        if (p.shape().rows != rows) {
            throw Error("concat: row mismatch, " + parts.front().shape().str() + " vs " +
                        p.shape().str());
        }
        ids.push_back(p.id());
        offsets.push_back(cols);
        cols += p.shape().cols;
    }
    Array out({rows, cols});
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Array& v = parts[k].value();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(v.row_span(r).begin(), v.row_span(r).end(),
                      out.row_span(r).begin() + static_cast<std::ptrdiff_t>(offsets[k]));
        }
    }
    Tape& tape = parts.front().tape();
    return tape.record(std::move(out), ids, [ids, offsets](Tape& t, std::size_t self) {
        const Array& g = t.node(self).grad;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!t.node(ids[k]).requires_grad) continue;
            Array& gp = t.grad_buffer(ids[k]);
            for (std::size_t r = 0; r < gp.rows(); ++r) {
                for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += g(r, offsets[k] + c);
            }
        }
    });
}

DiffArray concat(std::initializer_list<DiffArray> parts) {
    return concat(std::span<const DiffArray>(parts.begin(), parts.size()));
}

DiffArray slice_cols(const DiffArray& a, std::size_t begin, std::size_t end) {
    Array out = slice_columns(a.value(), begin, end);
    const std::size_t ia = a.id();
    return a.tape().record(std::move(out), {ia}, [ia, begin](Tape& t, std::size_t self) {
        const Array& g = t.node(self).grad;
        Array& ga = t.grad_buffer(ia);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) ga(r, begin + c) += g(r, c);
        }
    });
}

DiffArray sum(const DiffArray& a) {
    double total = 0.0;
    for (double v : a.value().data) total += v;
    const std::size_t ia = a.id();
    return a.tape().record(Array::scalar(total), {ia}, [ia](Tape& t, std::size_t self) {
        const double g = t.node(self).grad.data[0];
        Array& ga = t.grad_buffer(ia);
        for (double& v : ga.data) v += g;
    });
}

DiffArray stop_gradient(const DiffArray& a) { return a.tape().constant(a.value()); }

DiffArray straight_through_threshold(const DiffArray& a, double threshold) {
    return unary(
        a, [threshold](double x) { return x >= threshold ? 1.0 : 0.0; },
        [](double, double) { return 1.0; });
}

DiffArray softmax_cross_entropy(const DiffArray& logits, std::span<const int> labels) {
    const Array& z = logits.value();
    if (labels.size() != z.rows()) {
        throw Error("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                    z.shape.str());
    }
    if (z.rows() == 0) throw Error("softmax_cross_entropy: empty batch");
    const std::size_t classes = z.cols();
    Array probs(z.shape);
    double total = 0.0;
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw Error("softmax_cross_entropy: class index " + std::to_string(y) + " out of range [0, " +
                        std::to_string(classes) + ")");
        }
        auto row = z.row_span(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double v : row) s += std::exp(v - mx);
        const double lse = mx + std::log(s);
        for (std::size_t c = 0; c < classes; ++c) probs(r, c) = std::exp(row[c] - lse);
        total += lse - row[static_cast<std::size_t>(y)];
    }
    const double n = static_cast<double>(z.rows());
    std::vector<int> targets(labels.begin(), labels.end());
    const std::size_t il = logits.id();
    return logits.tape().record(
        Array::scalar(total / n), {il},
        [il, n, targets = std::move(targets), probs = std::move(probs)](Tape& t, std::size_t self) {
            const double g = t.node(self).grad.data[0] / n;
            Array& gl = t.grad_buffer(il);
            for (std::size_t r = 0; r < gl.rows(); ++r) {
                for (std::size_t c = 0; c < gl.cols(); ++c) {
                    const double onehot = static_cast<std::size_t>(targets[r]) == c ? 1.0 : 0.0;
                    gl(r, c) += g * (probs(r, c) - onehot);
                }
            }
        });
}

DiffArray binary_cross_entropy(const DiffArray& logits, const Array& targets,
                               std::span<const double> positive_weights) {
    const Array& z = logits.value();
    if (targets.shape != z.shape) {
        throw Error("binary_cross_entropy: logits " + z.shape.str() + " vs targets " +
                    targets.shape.str());
    }
    if (z.size() == 0) throw Error("binary_cross_entropy: empty input");
    if (!positive_weights.empty() && positive_weights.size() != z.cols()) {
        throw Error("binary_cross_entropy: " + std::to_string(positive_weights.size()) +
                    " weights for " + std::to_string(z.cols()) + " columns");
    }
    for (double w : positive_weights) {
        if (!(w > 0.0)) throw Error("binary_cross_entropy: weights must be strictly positive");
    }
    auto weight = [&](std::size_t c) { return positive_weights.empty() ? 1.0 : positive_weights[c]; };
    double total = 0.0;
    for (std::size_t r = 0; r < z.rows(); ++r) {
        for (std::size_t c = 0; c < z.cols(); ++c) {
            const double t = targets(r, c);
            if (t != 0.0 && t != 1.0) {
                throw Error("binary_cross_entropy: target " + std::to_string(t) + " is not in {0,1}");
            }
            const double x = z(r, c);
            total += t * weight(c) * softplus(-x) + (1.0 - t) * softplus(x);
        }
    }
    const double n = static_cast<double>(z.size());
    std::vector<double> w(z.cols());
    for (std::size_t c = 0; c < z.cols(); ++c) w[c] = weight(c);
    const std::size_t il = logits.id();
    return logits.tape().record(
        Array::scalar(total / n), {il},
        [il, n, targets, w = std::move(w)](Tape& t, std::size_t self) {
            const double g = t.node(self).grad.data[0] / n;
            const Array& x = t.node(il).value;
            Array& gl = t.grad_buffer(il);
            for (std::size_t r = 0; r < gl.rows(); ++r) {
                for (std::size_t c = 0; c < gl.cols(); ++c) {
                    const double s = stable_sigmoid(x(r, c));
                    const double y = targets(r, c);
                    gl(r, c) += g * (y * w[c] * (s - 1.0) + (1.0 - y) * s);
                }
            }
        });
}

}  // namespace cemlab
