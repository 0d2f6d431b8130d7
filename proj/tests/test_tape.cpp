#include <cmath>

#include "doctest.h"
#include "mgnm/tape.hpp"
#include "test_helpers.hpp"

using namespace mgnm;
using mgnm::test::check_gradient;
using mgnm::test::random_tensor;

TEST_CASE("sigmoid of zero matrix is one half everywhere") {
    Tape tape;
    Var x = tape.constant(Tensor(2, 2));
    Var y = tape.sigmoid(x);
    for (std::size_t i = 0; i < 4; ++i) CHECK(y.value().at(i) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("sparse identity times dense leaves it unchanged") {
    std::vector<SparseMatrix::Entry> entries{{0, 0, 1.0}, {1, 1, 1.0}, {2, 2, 1.0}};
    SparseMatrix id(3, 3, entries);
    Rng rng(11);
    Tensor x = random_tensor(3, 2, rng);
    Tape tape;
    Var v = tape.leaf("x", x);
    Var y = tape.spmm(id, v);
    CHECK(y.value().max_abs_diff(x) == 0.0);
}

TEST_CASE("row normalization matches the hand case and a scalar-loop oracle") {
    Tape tape;
    Var x = tape.constant(Tensor::from_rows({{3.0, 4.0}}));
    Var y = tape.row_normalize(x);
    CHECK(y.value()(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(y.value()(0, 1) == doctest::Approx(0.8).epsilon(1e-15));

    Rng rng(5);
    Tensor m = random_tensor(4, 3, rng);
    Tape tape2;
    Var normalized = tape2.row_normalize(tape2.constant(m));
    for (int r = 0; r < m.rows(); ++r) {
        double norm = 0.0;
        for (int c = 0; c < m.cols(); ++c) norm += m(r, c) * m(r, c);
        norm = std::sqrt(norm);
        for (int c = 0; c < m.cols(); ++c)
            CHECK(normalized.value()(r, c) == doctest::Approx(m(r, c) / norm).epsilon(1e-12));
    }
}

TEST_CASE("row normalization maps zero rows to zero rows") {
    Tape tape;
    Tensor x = Tensor::from_rows({{0.0, 0.0, 0.0}, {1.0, 2.0, 2.0}});
    Var y = tape.row_normalize(tape.constant(x));
    CHECK(y.value()(0, 0) == 0.0);
    CHECK(y.value()(0, 1) == 0.0);
    CHECK(y.value()(0, 2) == 0.0);
    CHECK(y.value()(1, 0) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("backward of a plain sum is all ones") {
    Tape tape;
    Rng rng(3);
    Tensor w = random_tensor(2, 2, rng);
    Var v = tape.leaf("W", w);
    GradientMap grads = tape.backward(tape.sum(v));
    for (std::size_t i = 0; i < 4; ++i) CHECK(grads.at("W").at(i) == 1.0);
}

TEST_CASE("backward of half squared Frobenius norm is the matrix itself") {
    Tape tape;
    Rng rng(4);
    Tensor w = random_tensor(2, 2, rng);
    Var v = tape.leaf("W", w);
    Var norm = tape.frobenius_norm(v);
    Var loss = tape.scale(tape.mul(norm, norm), 0.5);
    GradientMap grads = tape.backward(loss);
    CHECK(grads.at("W").max_abs_diff(w) < 1e-12);
}

TEST_CASE("backward is linear in the loss") {
    Rng rng(7);
    Tensor w = random_tensor(3, 3, rng);
    const double a = 1.7, b = -0.4;

    auto grad_of = [&](const std::function<Var(Tape&, Var)>& make_loss) {
        Tape tape;
        Var v = tape.leaf("W", w);
        return tape.backward(make_loss(tape, v)).at("W");
    };
    Tensor g1 = grad_of([](Tape& t, Var v) { return t.sum(t.mul(v, v)); });
    Tensor g2 = grad_of([](Tape& t, Var v) { return t.frobenius_norm(v); });
    Tensor combined = grad_of([&](Tape& t, Var v) {
        return t.add(t.scale(t.sum(t.mul(v, v)), a), t.scale(t.frobenius_norm(v), b));
    });
    for (std::size_t i = 0; i < combined.size(); ++i)
        CHECK(combined.at(i) == doctest::Approx(a * g1.at(i) + b * g2.at(i)).epsilon(1e-12));
}

TEST_CASE("every op's vector-Jacobian product matches finite differences") {
    Rng rng(21);
    const Tensor x = random_tensor(3, 4, rng);
    const Tensor y = random_tensor(3, 4, rng);
    const Tensor positive = random_tensor(3, 4, rng, 0.5, 2.0);
    const std::map<std::string, Tensor> one{{"x", x}};
    const std::map<std::string, Tensor> two{{"x", x}, {"y", y}};

    auto unary = [&](const std::function<Var(Tape&, Var)>& op,
                     const std::map<std::string, Tensor>& inputs) {
        return check_gradient(
            [&](Tape& t, const std::map<std::string, Var>& v) { return op(t, v.at("x")); }, inputs);
    };

    CHECK(unary([](Tape& t, Var v) { return t.transpose(v); }, one) < 1e-6);
    CHECK(unary([](Tape& t, Var v) { return t.scale(v, -1.3); }, one) < 1e-6);
    CHECK(unary([](Tape& t, Var v) { return t.sigmoid(v); }, one) < 1e-6);
    CHECK(unary([](Tape& t, Var v) { return t.exp(v); }, one) < 1e-6);
    CHECK(unary([](Tape& t, Var v) { return t.log(v); }, {{"x", positive}}) < 1e-6);
    CHECK(unary([](Tape& t, Var v) { return t.row_normalize(v); }, one) < 1e-6);
    CHECK(unary([](Tape& t, Var v) { return t.row_mean(v); }, one) < 1e-6);
    CHECK(unary([](Tape& t, Var v) { return t.col_mean(v); }, one) < 1e-6);
    CHECK(unary([](Tape& t, Var v) { return t.sum(v); }, one) < 1e-6);
    CHECK(unary([](Tape& t, Var v) { return t.frobenius_norm(v); }, one) < 1e-6);
    CHECK(unary([](Tape& t, Var v) { return t.softplus(v); }, one) < 1e-6);
    CHECK(unary([](Tape& t, Var v) { return t.row_softmax(v); }, one) < 1e-6);
    CHECK(unary([](Tape& t, Var v) { return t.slice_rows(v, 1, 3); }, one) < 1e-6);

    auto binary = [&](const std::function<Var(Tape&, Var, Var)>& op,
                      const std::map<std::string, Tensor>& inputs) {
        return check_gradient(
            [&](Tape& t, const std::map<std::string, Var>& v) { return op(t, v.at("x"), v.at("y")); },
            inputs);
    };
    CHECK(binary([](Tape& t, Var a, Var b) { return t.add(a, b); }, two) < 1e-6);
    CHECK(binary([](Tape& t, Var a, Var b) { return t.sub(a, b); }, two) < 1e-6);
    CHECK(binary([](Tape& t, Var a, Var b) { return t.mul(a, b); }, two) < 1e-6);
    CHECK(binary([](Tape& t, Var a, Var b) { return t.concat_rows(a, b); }, two) < 1e-6);
    CHECK(binary([](Tape& t, Var a, Var b) { return t.matmul(a, t.transpose(b)); }, two) < 1e-6);

    // Broadcast variants of the elementwise ops.
    Rng rng2(22);
    const Tensor row = random_tensor(1, 4, rng2);
    const Tensor col = random_tensor(3, 1, rng2);
    CHECK(binary([](Tape& t, Var a, Var b) { return t.add(a, b); }, {{"x", x}, {"y", row}}) < 1e-6);
    CHECK(binary([](Tape& t, Var a, Var b) { return t.sub(a, b); }, {{"x", x}, {"y", col}}) < 1e-6);
    CHECK(binary([](Tape& t, Var a, Var b) { return t.mul(a, b); }, {{"x", x}, {"y", row}}) < 1e-6);
    CHECK(binary([](Tape& t, Var a, Var b) { return t.mul(a, b); }, {{"x", x}, {"y", col}}) < 1e-6);

    // Sparse product and dropout-with-mask.
    std::vector<SparseMatrix::Entry> entries{{0, 0, 0.5}, {0, 2, -1.0}, {1, 1, 2.0}, {2, 0, 1.0}};
    SparseMatrix sparse(3, 3, entries);
    CHECK(unary([&](Tape& t, Var v) { return t.spmm(sparse, v); }, one) < 1e-6);

    Tensor mask(3, 4);
    for (std::size_t i = 0; i < mask.size(); ++i) mask.at(i) = (i % 3 == 0) ? 0.0 : 1.0;
    CHECK(unary([&](Tape& t, Var v) { return t.dropout(v, mask, 0.25); }, one) < 1e-6);
}

TEST_CASE("dropout with rate zero is the identity") {
    Tape tape;
    Rng rng(9);
    Tensor x = random_tensor(3, 3, rng);
    Var v = tape.leaf("x", x);
    Var y = tape.dropout(v, Tensor(), 0.0);
    CHECK(y.value().max_abs_diff(x) == 0.0);
}

TEST_CASE("dropout with a fixed mask is deterministic and inverted") {
    Rng rng(10);
    Tensor x = random_tensor(2, 2, rng);
    Tensor mask = Tensor::from_rows({{1.0, 0.0}, {1.0, 1.0}});
    Tape tape;
    Var y = tape.dropout(tape.leaf("x", x), mask, 0.5);
    CHECK(y.value()(0, 0) == doctest::Approx(2.0 * x(0, 0)));
    CHECK(y.value()(0, 1) == 0.0);
    Tape tape2;
    Var y2 = tape2.dropout(tape2.leaf("x", x), mask, 0.5);
    CHECK(y.value().max_abs_diff(y2.value()) == 0.0);
}

TEST_CASE("sparse-dense product agrees with densified matmul up to 50x50") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const int rows = 2 + rng.next_int(49);
        const int inner = 2 + rng.next_int(49);
        const int cols = 1 + rng.next_int(8);
        std::vector<SparseMatrix::Entry> entries;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < inner; ++c)
                if (rng.next_double() < 0.15) entries.push_back({r, c, rng.uniform(-1.0, 1.0)});
        if (entries.empty()) entries.push_back({0, 0, 1.0});
        SparseMatrix sparse(rows, inner, entries);
        Tensor dense = random_tensor(inner, cols, rng);

        Tensor via_sparse = sparse.multiply(dense);
        Tensor via_dense = matmul(sparse.to_dense(), dense);
        for (std::size_t i = 0; i < via_sparse.size(); ++i) {
            const double denom = std::max(1.0, std::fabs(via_dense.at(i)));
            CHECK(std::fabs(via_sparse.at(i) - via_dense.at(i)) / denom < 1e-12);
        }
    }
}

TEST_CASE("shape mismatches raise errors naming the op and shapes") {
    Tape tape;
    Var a = tape.constant(Tensor(2, 3));
    Var b = tape.constant(Tensor(2, 2));
    CHECK_THROWS_WITH_AS(tape.matmul(a, b), "matmul: 2x3 vs 2x2", ShapeError);
    CHECK_THROWS_AS(tape.add(a, b), ShapeError);
    CHECK_THROWS_AS(tape.concat_rows(a, b), ShapeError);
    CHECK_THROWS_AS(tape.slice_rows(a, 1, 1), Error);
}

TEST_CASE("backward rejects non-scalar losses and foreign tapes") {
    Tape tape;
    Rng rng(12);
    Var v = tape.leaf("x", random_tensor(2, 2, rng));
    CHECK_THROWS_AS(tape.backward(v), ShapeError);

    Tape other;
    Var w = other.leaf("x", random_tensor(2, 2, rng));
    Var loss = other.sum(w);
    CHECK_THROWS_AS(tape.backward(loss), Error);
}

TEST_CASE("unused leaves get zero-filled gradients") {
    Tape tape;
    Rng rng(13);
    Var used = tape.leaf("used", random_tensor(2, 2, rng));
    tape.leaf("unused", random_tensor(3, 1, rng));
    GradientMap grads = tape.backward(tape.sum(used));
    CHECK(grads.count("unused") == 1);
    CHECK(grads.at("unused").rows() == 3);
    for (std::size_t i = 0; i < grads.at("unused").size(); ++i) CHECK(grads.at("unused").at(i) == 0.0);
}

TEST_CASE("gradient accumulates over fan-out") {
    Tape tape;
    Rng rng(14);
    Tensor x = random_tensor(2, 2, rng);
    Var v = tape.leaf("x", x);
    Var loss = tape.sum(tape.add(v, v));
    GradientMap grads = tape.backward(loss);
    for (std::size_t i = 0; i < 4; ++i) CHECK(grads.at("x").at(i) == 2.0);
}

TEST_CASE("finite_diff_check flags a non-deterministic builder") {
    int calls = 0;
    LossBuilder flaky = [&calls](const std::map<std::string, Tensor>& params, GradientMap* grads) {
        Tape tape;
        Var v = tape.leaf("x", params.at("x"));
        Var loss = tape.scale(tape.sum(v), 1.0 + 0.001 * calls++);
        if (grads != nullptr) *grads = tape.backward(loss);
        return loss.scalar();
    };
    Rng rng(15);
    std::map<std::string, Tensor> params{{"x", random_tensor(2, 2, rng)}};
    CHECK_THROWS_AS(finite_diff_check(flaky, params), Error);
}

TEST_CASE("exp guard keeps outputs finite on large inputs") {
    Tape tape;
    Var v = tape.constant(Tensor(1, 2, 1000.0));
    Var y = tape.exp(v);
    CHECK(y.value().all_finite());
}

TEST_CASE("leaf registration rejects duplicates and empty names") {
    Tape tape;
    Rng rng(16);
    tape.leaf("w", random_tensor(2, 2, rng));
    CHECK_THROWS_AS(tape.leaf("w", random_tensor(2, 2, rng)), Error);
    CHECK_THROWS_AS(tape.leaf("", random_tensor(2, 2, rng)), Error);
}

TEST_CASE("dropout validates the rate and mask shape") {
    Tape tape;
    Var v = tape.constant(Tensor(2, 2, 1.0));
    CHECK_THROWS_AS(tape.dropout(v, Tensor(2, 2, 1.0), 1.0), Error);
    CHECK_THROWS_AS(tape.dropout(v, Tensor(2, 2, 1.0), -0.1), Error);
    CHECK_THROWS_AS(tape.dropout(v, Tensor(3, 2, 1.0), 0.5), ShapeError);
}

TEST_CASE("ops reject operands from a different tape") {
    Tape a, b;
    Var va = a.constant(Tensor(2, 2, 1.0));
    Var vb = b.constant(Tensor(2, 2, 1.0));
    CHECK_THROWS_AS(a.add(va, vb), Error);
    CHECK_THROWS_AS(b.matmul(va, vb), Error);
}

TEST_CASE("random op compositions pass finite differences") {
    // Builds little random programs over the op suite and checks the whole
    // tape, fan-out and all, against the numeric oracle. The program is a
    // pure function of the seed, so the builder stays deterministic.
    for (std::uint64_t program_seed = 1; program_seed <= 20; ++program_seed) {
        Rng init_rng(1000 + program_seed);
        const std::map<std::string, Tensor> inputs{
            {"a", mgnm::test::random_tensor(3, 4, init_rng)},
            {"b", mgnm::test::random_tensor(3, 4, init_rng)},
            {"c", mgnm::test::random_tensor(4, 2, init_rng)},
        };

        auto build = [program_seed](Tape& t, const std::map<std::string, Var>& leaves) {
            Rng rng(program_seed);
            std::vector<Var> pool{leaves.at("a"), leaves.at("b"), leaves.at("c")};
            const int steps = 4 + rng.next_int(5);
            for (int s = 0; s < steps; ++s) {
                Var x = pool[rng.next_int(static_cast<int>(pool.size()))];
                switch (rng.next_int(10)) {
                    case 0: pool.push_back(t.transpose(x)); break;
                    case 1: pool.push_back(t.scale(x, rng.uniform(-1.5, 1.5))); break;
                    case 2: pool.push_back(t.sigmoid(x)); break;
                    case 3: pool.push_back(t.softplus(x)); break;
                    case 4: pool.push_back(t.row_softmax(x)); break;
                    case 5: pool.push_back(t.row_mean(x)); break;
                    case 6: pool.push_back(t.col_mean(x)); break;
                    case 7:
                        if (x.rows() >= 2) pool.push_back(t.slice_rows(x, 0, x.rows() - 1));
                        break;
                    case 8: {
                        // A same-shape partner, if any, for an elementwise op.
                        std::vector<Var> mates;
                        for (Var y : pool)
                            if (y.value().same_shape(x.value())) mates.push_back(y);
                        Var y = mates[rng.next_int(static_cast<int>(mates.size()))];
                        const int which = rng.next_int(3);
                        pool.push_back(which == 0 ? t.add(x, y) : which == 1 ? t.sub(x, y) : t.mul(x, y));
                        break;
                    }
                    default: {
                        std::vector<Var> mates;
                        for (Var y : pool)
                            if (y.rows() == x.cols()) mates.push_back(y);
                        if (!mates.empty())
                            pool.push_back(t.matmul(x, mates[rng.next_int(static_cast<int>(mates.size()))]));
                        break;
                    }
                }
            }
            // Every pool entry feeds the loss so every path gets checked.
            Var loss{};
            for (Var v : pool) {
                Var term = t.scale(t.sum(v), rng.uniform(-1.0, 1.0));
                loss = loss.valid() ? t.add(loss, term) : term;
            }
            return loss;
        };

        LossBuilder builder = [&](const std::map<std::string, Tensor>& params, GradientMap* grads) {
            Tape t;
            std::map<std::string, Var> leaves;
            for (const auto& [name, tensor] : params) leaves[name] = t.leaf(name, tensor);
            Var loss = build(t, leaves);
            if (grads != nullptr) *grads = t.backward(loss);
            return loss.scalar();
        };
        FiniteDiffOptions opts;
        opts.step = 1e-6;
        const FiniteDiffResult result = finite_diff_check(builder, inputs, opts);
        INFO("program seed ", program_seed, ", worst ", result.worst_parameter);
        CHECK(result.max_relative_error < 1e-5);
    }
}
