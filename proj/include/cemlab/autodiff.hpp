#pragma once

// Reverse-mode differentiation over dense 2-D arrays.
//
// A Tape records every operation of one forward pass (define-by-run). Nodes
// are appended in creation order, so parents always precede children and a
// single reverse sweep visits every node exactly once. A Tape and the
// DiffArrays that point into it must stay on one thread.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "cemlab/array.hpp"

namespace cemlab {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class DiffArray {
public:
    DiffArray() = default;

    bool valid() const { return tape_ != nullptr; }
    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }

    const Shape& shape() const;
    const Array& value() const;
    // Gradient of the last backward root w.r.t. this node. Zeros if the node
    // was not reached.
    const Array& grad() const;
    bool requires_grad() const;

private:
    friend class Tape;
    DiffArray(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    struct Node {
        Array value;
        Array grad;  // empty until something flows into it
        std::vector<std::size_t> parents;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf that accumulates gradient.
    DiffArray variable(Array value);
    // Leaf that never receives gradient.
    DiffArray constant(Array value);

    // Records an operation output. `backward` is only stored (and later
    // invoked) when at least one parent requires a gradient.
    DiffArray record(Array value, std::vector<std::size_t> parents, BackwardFn backward);

    // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse.
    void backward(const DiffArray& root);

    std::size_t size() const { return nodes_.size(); }
    Node& node(std::size_t id) { return nodes_[id]; }
    const Node& node(std::size_t id) const { return nodes_[id]; }

    // Gradient buffer of `id`, zero-filled on first access.
    Array& grad_buffer(std::size_t id);

private:
    // A deque keeps references to earlier values valid while recording.
    std::deque<Node> nodes_;
};

// Elementwise binary ops broadcast in numpy style restricted to 2-D: each
// operand dimension must equal the output dimension or be 1.
DiffArray add(const DiffArray& a, const DiffArray& b);
DiffArray sub(const DiffArray& a, const DiffArray& b);
DiffArray mul(const DiffArray& a, const DiffArray& b);
// factor * a + offset
DiffArray scale(const DiffArray& a, double factor, double offset = 0.0);

DiffArray matmul(const DiffArray& a, const DiffArray& b);

inline constexpr double kDefaultLeakySlope = 0.01;
DiffArray leaky_relu(const DiffArray& a, double slope = kDefaultLeakySlope);
DiffArray sigmoid(const DiffArray& a);

// Concatenation along the column axis. All parts share the row count.
DiffArray concat(std::span<const DiffArray> parts);
DiffArray concat(std::initializer_list<DiffArray> parts);
DiffArray slice_cols(const DiffArray& a, std::size_t begin, std::size_t end);

DiffArray sum(const DiffArray& a);

// Identity on values; blocks gradient to `a`.
DiffArray stop_gradient(const DiffArray& a);
// Forward: 1[a >= threshold]. Backward: identity (straight-through).
DiffArray straight_through_threshold(const DiffArray& a, double threshold = 0.5);

// Mean over rows of -log softmax(logits)[label]. Stabilised with log-sum-exp.
DiffArray softmax_cross_entropy(const DiffArray& logits, std::span<const int> labels);

// Mean over all entries of the logistic loss on `logits` against binary
// `targets`. When `positive_weights` (one per column) is given, the
// positive-class term of column j is multiplied by positive_weights[j].
DiffArray binary_cross_entropy(const DiffArray& logits, const Array& targets,
                               std::span<const double> positive_weights = {});

// Numerically stable scalar helpers shared with metrics and tests.
double stable_sigmoid(double x);
double softplus(double x);

}  // namespace cemlab
