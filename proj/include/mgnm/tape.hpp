#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mgnm/tensor.hpp"

namespace mgnm {

class Tape;

// Handle to a node on a Tape. Cheap to copy; never outlives its tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& value() const;
    int rows() const { return value().rows(); }
    int cols() const { return value().cols(); }
    double scalar() const;
};

using GradientMap = std::map<std::string, Tensor>;

// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
// order, so one reverse sweep visits inputs after their consumers. A tape
// and its Vars are confined to a single thread; independent tapes may run
// concurrently.
//
// Numerical guards (applied in forward and matched in backward so that
// gradients always differentiate the function actually computed):
//   log(x)   -> log(max(x, 1e-12)), gradient 0 in the clamped region
//   exp(x)   -> exp(min(x, 700)),   gradient 0 in the clamped region
//   1/norm   -> denominators floored at 1e-12
class Tape {
public:
    static constexpr double kEps = 1e-12;

    // Named trainable or constant input; requires_grad is taken from the
    // tensor. Leaf names must be unique per tape.
    Var leaf(const std::string& name, const Tensor& value);
    // Anonymous constant (never differentiated).
    Var constant(Tensor value);

    // --- op suite ------------------------------------------------------
    Var matmul(Var a, Var b);
    // s is a constant with respect to differentiation; the tape keeps its
    // own copy, so stack-built gather matrices are fine.
    Var spmm(const SparseMatrix& s, Var b);
    Var transpose(Var a);
    // add/sub/mul accept equal shapes, or b as a 1 x cols row vector or
    // rows x 1 column vector broadcast over a.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var sigmoid(Var a);
    Var exp(Var a);
    Var log(Var a);
    // Each row scaled to unit L2 norm; rows with norm < 1e-12 map to zero.
    Var row_normalize(Var a);
    Var row_mean(Var a);  // n x d -> n x 1
    Var col_mean(Var a);  // n x d -> 1 x d
    Var sum(Var a);       // -> 1 x 1
    Var frobenius_norm(Var a);
    Var softplus(Var a);
    Var row_softmax(Var a);
    // Inverted dropout with an explicit 0/1 mask: a .* mask / (1 - rate).
    // rate 0 is the identity regardless of mask.
    Var dropout(Var a, const Tensor& mask, double rate);
    Var concat_rows(Var a, Var b);
    // Rows [begin, end) of a.
    Var slice_rows(Var a, int begin, int end);

    // Gradients of a 1x1 loss for every named leaf with requires_grad,
    // zero-filled when the leaf does not reach the loss. Fan-out
    // accumulates additively.
    GradientMap backward(Var loss);

    const Tensor& value_of(int id) const { return nodes_[id].value; }
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        bool requires_grad = false;
        int input_a = -1;
        int input_b = -1;
        std::string leaf_name;  // empty for interior nodes and constants
        // Receives the upstream gradient and accumulates into the inputs'
        // slots via Tape::accumulate.
        std::function<void(Tape&, const Tensor&, std::vector<Tensor>&)> backprop;
    };

    Var push(Node node);
    void check_same_tape(Var v, const char* op) const;
    static void accumulate(std::vector<Tensor>& grads, int id, const Tensor& g);

    std::vector<Node> nodes_;
    std::map<std::string, int> leaves_;
};

// Arithmetic sugar forwarding to the owning tape.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator*(Var a, double c) { return a.tape->scale(a, c); }
inline Var operator*(double c, Var a) { return a.tape->scale(a, c); }

// --- finite-difference gradient oracle ---------------------------------
//
// Builds the loss from scratch at perturbed parameter values and compares
// central differences against the tape gradients. The builder must be
// deterministic: it is called twice up front and an Error is raised if the
// two forward values disagree.
struct FiniteDiffOptions {
    double step = 1e-5;
    // Tensors larger than this get a seeded random subsample of exactly
    // this many entries; smaller tensors are swept fully.
    int max_entries_per_tensor = 200;
    std::uint64_t seed = 0x5DEECE66DULL;
};

struct FiniteDiffResult {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    int checked_entries = 0;
};

// build_loss(params, grads_out): evaluates the scalar loss at the given
// parameter values; when grads_out is non-null it must also fill it with
// the tape gradients of every parameter.
using LossBuilder = std::function<double(const std::map<std::string, Tensor>&, GradientMap*)>;

FiniteDiffResult finite_diff_check(const LossBuilder& build_loss,
                                   const std::map<std::string, Tensor>& params,
                                   const FiniteDiffOptions& opts = {});

}  // namespace mgnm
