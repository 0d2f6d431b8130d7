#include "mgnm/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "mgnm/rng.hpp"

namespace mgnm {

namespace {

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

enum class Broadcast { none, row, col };

Broadcast classify_broadcast(const Tensor& a, const Tensor& b, const char* op) {
    if (a.same_shape(b)) return Broadcast::none;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
    if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::col;
    throw ShapeError(std::string(op) + ": " + a.shape_str() + " vs " + b.shape_str());
}

double broadcast_at(const Tensor& b, Broadcast kind, int r, int c) {
    switch (kind) {
        case Broadcast::none: return b(r, c);
        case Broadcast::row: return b(0, c);
        case Broadcast::col: return b(r, 0);
    }
    return 0.0;
}

// Sums an a-shaped gradient back down to b's broadcast shape.
Tensor reduce_for_broadcast(const Tensor& g, Broadcast kind) {
    if (kind == Broadcast::none) return g;
    if (kind == Broadcast::row) {
        Tensor out(1, g.cols());
        for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < g.cols(); ++c) out(0, c) += g(r, c);
        return out;
    }
    Tensor out(g.rows(), 1);
    for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) out(r, 0) += g(r, c);
    return out;
}

}  // namespace

const Tensor& Var::value() const {
    if (!valid()) throw Error("var: access to an invalid handle");
    return tape->value_of(id);
}

double Var::scalar() const {
    const Tensor& v = value();
    if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar: expected 1x1, got " + v.shape_str());
    return v(0, 0);
}

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::check_same_tape(Var v, const char* op) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw Error(std::string(op) + ": operand does not belong to this tape");
}

void Tape::accumulate(std::vector<Tensor>& grads, int id, const Tensor& g) {
    Tensor& slot = grads[id];
    if (slot.empty()) {
        slot = g;
        return;
    }
    for (std::size_t i = 0; i < slot.size(); ++i) slot.at(i) += g.at(i);
}

Var Tape::leaf(const std::string& name, const Tensor& value) {
    if (name.empty()) throw Error("leaf: name must be non-empty");
    if (leaves_.count(name)) throw Error("leaf: duplicate name '" + name + "'");
    Node n;
    n.value = value;
    n.requires_grad = value.requires_grad;
    n.leaf_name = name;
    Var v = push(std::move(n));
    leaves_[name] = v.id;
    return v;
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = false;
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    check_same_tape(a, "matmul");
    check_same_tape(b, "matmul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.rows()) throw ShapeError("matmul: " + av.shape_str() + " vs " + bv.shape_str());
    Node n;
    n.value = mgnm::matmul(av, bv);
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.input_a = a.id;
    n.input_b = b.id;
    const int ai = a.id, bi = b.id;
    n.backprop = [ai, bi](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        if (t.nodes_[ai].requires_grad)
            t.accumulate(grads, ai, mgnm::matmul(g, mgnm::transpose(t.value_of(bi))));
        if (t.nodes_[bi].requires_grad)
            t.accumulate(grads, bi, mgnm::matmul(mgnm::transpose(t.value_of(ai)), g));
    };
    return push(std::move(n));
}

Var Tape::spmm(const SparseMatrix& s, Var b) {
    check_same_tape(b, "spmm");
    Node n;
    n.value = s.multiply(b.value());
    n.requires_grad = nodes_[b.id].requires_grad;
    n.input_a = b.id;
    const int bi = b.id;
    // The tape owns a copy: callers often build gather matrices on the stack.
    auto sp = std::make_shared<SparseMatrix>(s);
    n.backprop = [bi, sp](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        if (t.nodes_[bi].requires_grad) t.accumulate(grads, bi, sp->multiply_transposed(g));
    };
    return push(std::move(n));
}

Var Tape::transpose(Var a) {
    check_same_tape(a, "transpose");
    Node n;
    n.value = mgnm::transpose(a.value());
    n.requires_grad = nodes_[a.id].requires_grad;
    n.input_a = a.id;
    const int ai = a.id;
    n.backprop = [ai](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        t.accumulate(grads, ai, mgnm::transpose(g));
    };
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    check_same_tape(a, "add");
    check_same_tape(b, "add");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Broadcast kind = classify_broadcast(av, bv, "add");
    Tensor out = av;
    for (int r = 0; r < out.rows(); ++r)
        for (int c = 0; c < out.cols(); ++c) out(r, c) += broadcast_at(bv, kind, r, c);
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.input_a = a.id;
    n.input_b = b.id;
    const int ai = a.id, bi = b.id;
    n.backprop = [ai, bi, kind](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        if (t.nodes_[ai].requires_grad) t.accumulate(grads, ai, g);
        if (t.nodes_[bi].requires_grad) t.accumulate(grads, bi, reduce_for_broadcast(g, kind));
    };
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    check_same_tape(a, "sub");
    check_same_tape(b, "sub");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Broadcast kind = classify_broadcast(av, bv, "sub");
    Tensor out = av;
    for (int r = 0; r < out.rows(); ++r)
        for (int c = 0; c < out.cols(); ++c) out(r, c) -= broadcast_at(bv, kind, r, c);
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.input_a = a.id;
    n.input_b = b.id;
    const int ai = a.id, bi = b.id;
    n.backprop = [ai, bi, kind](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        if (t.nodes_[ai].requires_grad) t.accumulate(grads, ai, g);
        if (t.nodes_[bi].requires_grad) {
            Tensor r = reduce_for_broadcast(g, kind);
            for (std::size_t i = 0; i < r.size(); ++i) r.at(i) = -r.at(i);
            t.accumulate(grads, bi, r);
        }
    };
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    check_same_tape(a, "mul");
    check_same_tape(b, "mul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Broadcast kind = classify_broadcast(av, bv, "mul");
    Tensor out = av;
    for (int r = 0; r < out.rows(); ++r)
        for (int c = 0; c < out.cols(); ++c) out(r, c) *= broadcast_at(bv, kind, r, c);
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.input_a = a.id;
    n.input_b = b.id;
    const int ai = a.id, bi = b.id;
    n.backprop = [ai, bi, kind](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        const Tensor& av2 = t.value_of(ai);
        const Tensor& bv2 = t.value_of(bi);
        if (t.nodes_[ai].requires_grad) {
            Tensor da(g.rows(), g.cols());
            for (int r = 0; r < g.rows(); ++r)
                for (int c = 0; c < g.cols(); ++c) da(r, c) = g(r, c) * broadcast_at(bv2, kind, r, c);
            t.accumulate(grads, ai, da);
        }
        if (t.nodes_[bi].requires_grad) {
            Tensor prod(g.rows(), g.cols());
            for (int r = 0; r < g.rows(); ++r)
                for (int c = 0; c < g.cols(); ++c) prod(r, c) = g(r, c) * av2(r, c);
            t.accumulate(grads, bi, reduce_for_broadcast(prod, kind));
        }
    };
    return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
    check_same_tape(a, "scale");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= c;
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.id].requires_grad;
    n.input_a = a.id;
    const int ai = a.id;
    n.backprop = [ai, c](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        Tensor da = g;
        for (std::size_t i = 0; i < da.size(); ++i) da.at(i) *= c;
        t.accumulate(grads, ai, da);
    };
    return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
    check_same_tape(a, "sigmoid");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = stable_sigmoid(out.at(i));
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.id].requires_grad;
    n.input_a = a.id;
    const int ai = a.id;
    n.backprop = [ai](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        const Tensor& x = t.value_of(ai);
        Tensor da = g;
        for (std::size_t i = 0; i < da.size(); ++i) {
            const double y = stable_sigmoid(x.at(i));
            da.at(i) *= y * (1.0 - y);
        }
        t.accumulate(grads, ai, da);
    };
    return push(std::move(n));
}

Var Tape::exp(Var a) {
    check_same_tape(a, "exp");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = std::exp(std::min(out.at(i), 700.0));
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.id].requires_grad;
    n.input_a = a.id;
    const int ai = a.id;
    n.backprop = [ai](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        const Tensor& x = t.value_of(ai);
        Tensor da = g;
        for (std::size_t i = 0; i < da.size(); ++i)
            da.at(i) *= x.at(i) < 700.0 ? std::exp(x.at(i)) : 0.0;
        t.accumulate(grads, ai, da);
    };
    return push(std::move(n));
}

Var Tape::log(Var a) {
    check_same_tape(a, "log");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = std::log(std::max(out.at(i), kEps));
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.id].requires_grad;
    n.input_a = a.id;
    const int ai = a.id;
    n.backprop = [ai](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        const Tensor& x = t.value_of(ai);
        Tensor da = g;
        for (std::size_t i = 0; i < da.size(); ++i)
            da.at(i) *= x.at(i) > kEps ? 1.0 / x.at(i) : 0.0;
        t.accumulate(grads, ai, da);
    };
    return push(std::move(n));
}

Var Tape::row_normalize(Var a) {
    check_same_tape(a, "row_normalize");
    const Tensor& x = a.value();
    Tensor out(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
        double sq = 0.0;
        for (int c = 0; c < x.cols(); ++c) sq += x(r, c) * x(r, c);
        const double norm = std::sqrt(sq);
        if (norm < kEps) continue;  // zero row stays zero
        for (int c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) / norm;
    }
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.id].requires_grad;
    n.input_a = a.id;
    const int ai = a.id;
    n.backprop = [ai](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        const Tensor& x = t.value_of(ai);
        Tensor da(x.rows(), x.cols());
        for (int r = 0; r < x.rows(); ++r) {
            double sq = 0.0;
            for (int c = 0; c < x.cols(); ++c) sq += x(r, c) * x(r, c);
            const double norm = std::sqrt(sq);
            if (norm < kEps) continue;
            double dot = 0.0;
            for (int c = 0; c < x.cols(); ++c) dot += g(r, c) * x(r, c) / norm;
            for (int c = 0; c < x.cols(); ++c) da(r, c) = (g(r, c) - dot * x(r, c) / norm) / norm;
        }
        t.accumulate(grads, ai, da);
    };
    return push(std::move(n));
}

Var Tape::row_mean(Var a) {
    check_same_tape(a, "row_mean");
    const Tensor& x = a.value();
    if (x.cols() == 0) throw ShapeError("row_mean: " + x.shape_str() + " vs 0 columns");
    Tensor out(x.rows(), 1);
    for (int r = 0; r < x.rows(); ++r) {
        double s = 0.0;
        for (int c = 0; c < x.cols(); ++c) s += x(r, c);
        out(r, 0) = s / x.cols();
    }
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.id].requires_grad;
    n.input_a = a.id;
    const int ai = a.id;
    const int cols = x.cols();
    n.backprop = [ai, cols](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        Tensor da(g.rows(), cols);
        for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < cols; ++c) da(r, c) = g(r, 0) / cols;
        t.accumulate(grads, ai, da);
    };
    return push(std::move(n));
}

Var Tape::col_mean(Var a) {
    check_same_tape(a, "col_mean");
    const Tensor& x = a.value();
    if (x.rows() == 0) throw ShapeError("col_mean: " + x.shape_str() + " vs 0 rows");
    Tensor out(1, x.cols());
    for (int r = 0; r < x.rows(); ++r)
        for (int c = 0; c < x.cols(); ++c) out(0, c) += x(r, c) / x.rows();
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.id].requires_grad;
    n.input_a = a.id;
    const int ai = a.id;
    const int rows = x.rows();
    n.backprop = [ai, rows](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        Tensor da(rows, g.cols());
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < g.cols(); ++c) da(r, c) = g(0, c) / rows;
        t.accumulate(grads, ai, da);
    };
    return push(std::move(n));
}

Var Tape::sum(Var a) {
    check_same_tape(a, "sum");
    const Tensor& x = a.value();
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x.at(i);
    Node n;
    n.value = Tensor(1, 1, s);
    n.requires_grad = nodes_[a.id].requires_grad;
    n.input_a = a.id;
    const int ai = a.id;
    const int rows = x.rows(), cols = x.cols();
    n.backprop = [ai, rows, cols](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        t.accumulate(grads, ai, Tensor(rows, cols, g(0, 0)));
    };
    return push(std::move(n));
}

Var Tape::frobenius_norm(Var a) {
    check_same_tape(a, "frobenius_norm");
    const Tensor& x = a.value();
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) sq += x.at(i) * x.at(i);
    const double norm = std::sqrt(sq);
    Node n;
    n.value = Tensor(1, 1, norm);
    n.requires_grad = nodes_[a.id].requires_grad;
    n.input_a = a.id;
    const int ai = a.id;
    n.backprop = [ai, norm](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        const Tensor& x2 = t.value_of(ai);
        const double denom = std::max(norm, kEps);
        Tensor da(x2.rows(), x2.cols());
        for (std::size_t i = 0; i < da.size(); ++i) da.at(i) = g(0, 0) * x2.at(i) / denom;
        t.accumulate(grads, ai, da);
    };
    return push(std::move(n));
}

Var Tape::softplus(Var a) {
    check_same_tape(a, "softplus");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = stable_softplus(out.at(i));
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.id].requires_grad;
    n.input_a = a.id;
    const int ai = a.id;
    n.backprop = [ai](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        const Tensor& x = t.value_of(ai);
        Tensor da = g;
        for (std::size_t i = 0; i < da.size(); ++i) da.at(i) *= stable_sigmoid(x.at(i));
        t.accumulate(grads, ai, da);
    };
    return push(std::move(n));
}

Var Tape::row_softmax(Var a) {
    check_same_tape(a, "row_softmax");
    const Tensor& x = a.value();
    Tensor out(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
        double mx = x(r, 0);
        for (int c = 1; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
        double denom = 0.0;
        for (int c = 0; c < x.cols(); ++c) denom += std::exp(x(r, c) - mx);
        for (int c = 0; c < x.cols(); ++c) out(r, c) = std::exp(x(r, c) - mx) / denom;
    }
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.id].requires_grad;
    n.input_a = a.id;
    const int ai = a.id;
    const int self_id = static_cast<int>(nodes_.size());
    n.backprop = [ai, self_id](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        const Tensor& y = t.value_of(self_id);
        Tensor da(y.rows(), y.cols());
        for (int r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (int c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
            for (int c = 0; c < y.cols(); ++c) da(r, c) = (g(r, c) - dot) * y(r, c);
        }
        t.accumulate(grads, ai, da);
    };
    return push(std::move(n));
}

Var Tape::dropout(Var a, const Tensor& mask, double rate) {
    check_same_tape(a, "dropout");
    if (rate < 0.0 || rate >= 1.0) throw Error("dropout: rate must be in [0,1), got " + std::to_string(rate));
    const Tensor& x = a.value();
    if (rate == 0.0) {
        Node n;
        n.value = x;
        n.requires_grad = nodes_[a.id].requires_grad;
        n.input_a = a.id;
        const int ai = a.id;
        n.backprop = [ai](Tape& t, const Tensor& g, std::vector<Tensor>& grads) { t.accumulate(grads, ai, g); };
        return push(std::move(n));
    }
    if (!x.same_shape(mask)) throw ShapeError("dropout: " + x.shape_str() + " vs mask " + mask.shape_str());
    const double inv_keep = 1.0 / (1.0 - rate);
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= mask.at(i) * inv_keep;
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.id].requires_grad;
    n.input_a = a.id;
    const int ai = a.id;
    n.backprop = [ai, m = mask, inv_keep](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        Tensor da = g;
        for (std::size_t i = 0; i < da.size(); ++i) da.at(i) *= m.at(i) * inv_keep;
        t.accumulate(grads, ai, da);
    };
    return push(std::move(n));
}

Var Tape::concat_rows(Var a, Var b) {
    check_same_tape(a, "concat_rows");
    check_same_tape(b, "concat_rows");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.cols()) throw ShapeError("concat_rows: " + av.shape_str() + " vs " + bv.shape_str());
    Tensor out(av.rows() + bv.rows(), av.cols());
    for (int r = 0; r < av.rows(); ++r)
        for (int c = 0; c < av.cols(); ++c) out(r, c) = av(r, c);
    for (int r = 0; r < bv.rows(); ++r)
        for (int c = 0; c < bv.cols(); ++c) out(av.rows() + r, c) = bv(r, c);
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    n.input_a = a.id;
    n.input_b = b.id;
    const int ai = a.id, bi = b.id;
    const int a_rows = av.rows(), b_rows = bv.rows();
    n.backprop = [ai, bi, a_rows, b_rows](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        if (t.nodes_[ai].requires_grad) {
            Tensor da(a_rows, g.cols());
            for (int r = 0; r < a_rows; ++r)
                for (int c = 0; c < g.cols(); ++c) da(r, c) = g(r, c);
            t.accumulate(grads, ai, da);
        }
        if (t.nodes_[bi].requires_grad) {
            Tensor db(b_rows, g.cols());
            for (int r = 0; r < b_rows; ++r)
                for (int c = 0; c < g.cols(); ++c) db(r, c) = g(a_rows + r, c);
            t.accumulate(grads, bi, db);
        }
    };
    return push(std::move(n));
}

Var Tape::slice_rows(Var a, int begin, int end) {
    check_same_tape(a, "slice_rows");
    const Tensor& x = a.value();
    if (begin < 0 || end > x.rows() || begin >= end)
        throw Error("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                    ") invalid for " + x.shape_str());
    Tensor out(end - begin, x.cols());
    for (int r = begin; r < end; ++r)
        for (int c = 0; c < x.cols(); ++c) out(r - begin, c) = x(r, c);
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.id].requires_grad;
    n.input_a = a.id;
    const int ai = a.id;
    const int rows = x.rows(), b = begin;
    n.backprop = [ai, rows, b](Tape& t, const Tensor& g, std::vector<Tensor>& grads) {
        Tensor da(rows, g.cols());
        for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < g.cols(); ++c) da(b + r, c) = g(r, c);
        t.accumulate(grads, ai, da);
    };
    return push(std::move(n));
}

GradientMap Tape::backward(Var loss) {
    if (loss.tape != this) throw Error("backward: loss was not built on this tape");
    if (loss.id < 0 || loss.id >= static_cast<int>(nodes_.size()))
        throw Error("backward: loss node id out of range");
    const Tensor& lv = nodes_[loss.id].value;
    if (lv.rows() != 1 || lv.cols() != 1)
        throw ShapeError("backward: loss must be 1x1, got " + lv.shape_str());

    std::vector<Tensor> grads(nodes_.size());
    grads[loss.id] = Tensor(1, 1, 1.0);

    for (int i = loss.id; i >= 0; --i) {
        Node& node = nodes_[i];
        if (grads[i].empty() || !node.requires_grad || !node.backprop) continue;
        node.backprop(*this, grads[i], grads);
    }

    GradientMap out;
    for (const auto& [name, id] : leaves_) {
        const Node& node = nodes_[id];
        if (!node.requires_grad) continue;
        if (grads[id].empty())
            out[name] = Tensor(node.value.rows(), node.value.cols());
        else
            out[name] = std::move(grads[id]);
    }
    return out;
}

FiniteDiffResult finite_diff_check(const LossBuilder& build_loss,
                                   const std::map<std::string, Tensor>& params,
                                   const FiniteDiffOptions& opts) {
    const double f1 = build_loss(params, nullptr);
    const double f2 = build_loss(params, nullptr);
    if (f1 != f2)
        throw Error("finite_diff_check: loss builder is not deterministic (" + std::to_string(f1) +
                    " vs " + std::to_string(f2) + ")");

    GradientMap grads;
    build_loss(params, &grads);

    FiniteDiffResult result;
    std::map<std::string, Tensor> work = params;
    for (const auto& [name, tensor] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) throw Error("finite_diff_check: builder returned no gradient for '" + name + "'");
        const Tensor& analytic = git->second;
        if (!analytic.same_shape(tensor))
            throw ShapeError("finite_diff_check: gradient " + analytic.shape_str() + " vs parameter " +
                             tensor.shape_str());

        std::vector<std::size_t> indices(tensor.size());
        std::iota(indices.begin(), indices.end(), std::size_t{0});
        std::size_t count = indices.size();
        if (count > static_cast<std::size_t>(opts.max_entries_per_tensor)) {
            Rng rng(mix_seed(opts.seed, fnv1a(name.data(), name.size())));
            count = static_cast<std::size_t>(opts.max_entries_per_tensor);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t j = i + rng.next_below(indices.size() - i);
                std::swap(indices[i], indices[j]);
            }
        }

        Tensor& slot = work.at(name);
        for (std::size_t k = 0; k < count; ++k) {
            const std::size_t idx = indices[k];
            const double orig = slot.at(idx);
            slot.at(idx) = orig + opts.step;
            const double fp = build_loss(work, nullptr);
            slot.at(idx) = orig - opts.step;
            const double fm = build_loss(work, nullptr);
            slot.at(idx) = orig;
            const double numeric = (fp - fm) / (2.0 * opts.step);
            const double a = analytic.at(idx);
            const double rel = std::fabs(a - numeric) / std::max(1e-8, std::fabs(a) + std::fabs(numeric));
            if (rel > result.max_relative_error) {
                result.max_relative_error = rel;
                result.worst_parameter = name + "[" + std::to_string(idx) + "]";
            }
            ++result.checked_entries;
        }
    }
    return result;
}

}  // namespace mgnm
