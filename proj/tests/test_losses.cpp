#include <cmath>

#include "doctest.h"
#include "mgnm/global_interaction.hpp"
#include "mgnm/losses.hpp"
#include "mgnm/model.hpp"
#include "mgnm/trainer.hpp"
#include "test_helpers.hpp"

using namespace mgnm;
using mgnm::test::check_gradient;
using mgnm::test::random_tensor;

namespace {

// Pairwise Pearson correlation with scalar loops and the same variance
// floor; diagonal pinned to 1.
Tensor pearson_oracle(const Tensor& x) {
    const int n = x.rows(), d = x.cols();
    std::vector<double> mean(d, 0.0);
    for (int c = 0; c < d; ++c) {
        for (int r = 0; r < n; ++r) mean[c] += x(r, c);
        mean[c] /= n;
    }
    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
            for (int r = 0; r < n; ++r) cov[a][b] += (x(r, a) - mean[a]) * (x(r, b) - mean[b]);
    Tensor p(d, d);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
            p(a, b) = a == b ? 1.0
                             : cov[a][b] / std::sqrt(std::max(cov[a][a], 1e-12) *
                                                     std::max(cov[b][b], 1e-12));
    return p;
}

double p_cov_oracle(const Tensor& x) {
    Tensor p = pearson_oracle(x);
    double sum = 0.0;
    for (int a = 0; a < p.rows(); ++a)
        for (int b = 0; b < p.cols(); ++b)
            if (a != b) sum += p(a, b) * p(a, b);
    return std::sqrt(0.5 * sum);
}

double eval_p_cov(const Tensor& x) {
    Tape tape;
    return p_cov(tape, tape.constant(x)).scalar();
}

}  // namespace

TEST_CASE("equal positive and negative scores give ln 2 per triple") {
    // All item embeddings identical, so every margin is zero.
    const int p = 3, q = 4, d = 2;
    Rng rng(81);
    Tensor e_star = random_tensor(p + q, d, rng);
    for (int i = 1; i < q; ++i)
        for (int c = 0; c < d; ++c) e_star(p + i, c) = e_star(p + 0, c);

    TripleBatch batch;
    batch.triples = {{0, 0, 1}, {1, 2, 3}, {2, 1, 0}, {0, 3, 2}};
    Tape tape;
    Var loss = bpr_loss(tape, tape.leaf("E", e_star), p, batch, 0.0, {});
    CHECK(loss.scalar() == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("a +30 margin saturates the ranking loss") {
    const int p = 1, q = 2, d = 1;
    Tensor e_star(p + q, d);
    e_star(0, 0) = 1.0;   // user
    e_star(1, 0) = 30.0;  // positive item
    e_star(2, 0) = 0.0;   // negative item
    TripleBatch batch;
    batch.triples = {{0, 0, 1}};
    Tape tape;
    Var loss = bpr_loss(tape, tape.constant(e_star), p, batch, 0.0, {});
    CHECK(loss.scalar() < 1e-12);
    CHECK(loss.scalar() >= 0.0);
}

TEST_CASE("the regularizer adds lambda times the squared L2 norm") {
    const int p = 1, q = 2;
    Tensor e_star(p + q, 2);  // all-zero embeddings: ranking part is ln 2
    TripleBatch batch;
    batch.triples = {{0, 0, 1}};

    Tensor theta(2, 2);
    theta(1, 0) = 2.0;
    theta.requires_grad = true;
    Tape tape;
    std::map<std::string, Var> params{{"theta", tape.leaf("theta", theta)}};
    Var loss = bpr_loss(tape, tape.constant(e_star), p, batch, 1.0, params);
    CHECK(loss.scalar() == doctest::Approx(std::log(2.0) + 4.0).epsilon(1e-12));
}

TEST_CASE("bpr_loss rejects an empty batch") {
    Tape tape;
    Var e = tape.constant(Tensor(3, 2));
    CHECK_THROWS_AS(bpr_loss(tape, e, 1, TripleBatch{}, 0.0, {}), Error);
}

TEST_CASE("column correlation handles duplicated and constant columns") {
    SUBCASE("two identical columns correlate perfectly") {
        Tensor x = Tensor::from_rows({{1.0, 1.0}, {2.0, 2.0}, {-0.5, -0.5}});
        Tape tape;
        Var corr = column_correlation(tape, tape.constant(x));
        for (std::size_t i = 0; i < 4; ++i) CHECK(corr.value().at(i) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("a constant column correlates to zero off the diagonal") {
        Tensor x = Tensor::from_rows({{5.0, 1.0}, {5.0, 2.0}, {5.0, 3.0}});
        Tape tape;
        Var corr = column_correlation(tape, tape.constant(x));
        CHECK(corr.value()(0, 0) == 1.0);
        CHECK(corr.value()(1, 1) == 1.0);
        CHECK(corr.value()(0, 1) == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(corr.value()(1, 0) == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("random matrices match the pairwise Pearson oracle") {
        Rng rng(82);
        for (int trial = 0; trial < 5; ++trial) {
            Tensor x = random_tensor(6, 4, rng);
            Tape tape;
            Var corr = column_correlation(tape, tape.constant(x));
            CHECK(corr.value().max_abs_diff(pearson_oracle(x)) < 1e-10);
        }
    }
    SUBCASE("fewer than two rows is an error") {
        Tape tape;
        Var x = tape.constant(Tensor(1, 3));
        CHECK_THROWS_AS(column_correlation(tape, x), Error);
    }
}

TEST_CASE("p_cov is zero for decorrelated columns and one for duplicates") {
    Tensor orthogonal = Tensor::from_rows({{1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0}});
    CHECK(eval_p_cov(orthogonal) < 1e-8);

    Tensor duplicated = Tensor::from_rows({{1.0, 1.0}, {2.0, 2.0}, {3.5, 3.5}});
    CHECK(eval_p_cov(duplicated) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(83);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor x = random_tensor(7, 5, rng);
        CHECK(eval_p_cov(x) == doctest::Approx(p_cov_oracle(x)).epsilon(1e-10));
    }
}

TEST_CASE("p_cov is invariant to column shifts and positive scalings") {
    Rng rng(84);
    Tensor x = random_tensor(6, 4, rng);
    const double base = eval_p_cov(x);

    Tensor shifted = x;
    for (int r = 0; r < 6; ++r) shifted(r, 2) += 17.5;
    CHECK(std::fabs(eval_p_cov(shifted) - base) < 1e-10);

    Tensor scaled = x;
    for (int r = 0; r < 6; ++r) scaled(r, 1) *= 3.75;
    CHECK(std::fabs(eval_p_cov(scaled) - base) < 1e-10);
}

TEST_CASE("p_cov respects the off-diagonal bound") {
    Rng rng(85);
    for (int trial = 0; trial < 10; ++trial) {
        const int d = 2 + rng.next_int(5);
        Tensor x = random_tensor(8, d, rng);
        CHECK(eval_p_cov(x) <= std::sqrt(static_cast<double>(d) * (d - 1)) / std::sqrt(2.0) + 1e-9);
    }
}

TEST_CASE("layer coefficients are inverse-correlation weights") {
    SUBCASE("equal inputs share the weight") {
        auto mu = layer_coefficients({0.4, 0.4, 0.4});
        for (double m : mu) CHECK(m == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("hand case (1,2) gives (2/3, 1/3)") {
        auto mu = layer_coefficients({1.0, 2.0});
        CHECK(mu[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
        CHECK(mu[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("they always sum to one and favor smaller p_cov") {
        Rng rng(86);
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<double> values;
            for (int l = 0; l < 4; ++l) values.push_back(rng.uniform(0.05, 3.0));
            auto mu = layer_coefficients(values);
            double sum = 0.0;
            for (double m : mu) sum += m;
            CHECK(std::fabs(sum - 1.0) < 1e-12);
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b)
                    if (values[a] < values[b]) CHECK(mu[a] > mu[b]);
        }
    }
}

TEST_CASE("ddr loss composes p_cov with the adaptive weights") {
    SUBCASE("orthogonal centered designs cost nothing") {
        Tensor x = Tensor::from_rows({{1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0}});
        Tape tape;
        Var v = tape.constant(x);
        Var loss = ddr_loss(tape, {v, v}, {v, v});
        CHECK(loss.scalar() < 1e-7);
    }
    SUBCASE("a single layer degenerates to the sum of the two p_cov terms") {
        Rng rng(87);
        Tensor users = random_tensor(6, 3, rng);
        Tensor items = random_tensor(5, 3, rng);
        Tape tape;
        Var loss = ddr_loss(tape, {tape.constant(users)}, {tape.constant(items)});
        CHECK(loss.scalar() ==
              doctest::Approx(p_cov_oracle(users) + p_cov_oracle(items)).epsilon(1e-10));
    }
    SUBCASE("two layers match the composed oracle") {
        Rng rng(88);
        std::vector<Tensor> users{random_tensor(6, 3, rng), random_tensor(6, 3, rng)};
        std::vector<Tensor> items{random_tensor(5, 3, rng), random_tensor(5, 3, rng)};
        Tape tape;
        Var loss = ddr_loss(tape, {tape.constant(users[0]), tape.constant(users[1])},
                            {tape.constant(items[0]), tape.constant(items[1])});

        std::vector<double> pu{p_cov_oracle(users[0]), p_cov_oracle(users[1])};
        std::vector<double> pi{p_cov_oracle(items[0]), p_cov_oracle(items[1])};
        auto mu_u = layer_coefficients(pu);
        auto mu_i = layer_coefficients(pi);
        const double expected = mu_u[0] * pu[0] + mu_u[1] * pu[1] + mu_i[0] * pi[0] + mu_i[1] * pi[1];
        CHECK(loss.scalar() == doctest::Approx(expected).epsilon(1e-10));
    }
    SUBCASE("mismatched layer lists are rejected") {
        Tape tape;
        Var v = tape.constant(Tensor(4, 2));
        CHECK_THROWS_AS(ddr_loss(tape, {v, v}, {v}), Error);
    }
}

TEST_CASE("modality ddr adds up per-modality penalties") {
    Rng rng(89);
    Tensor u1 = random_tensor(6, 3, rng), i1 = random_tensor(5, 3, rng);
    Tensor u2 = random_tensor(6, 3, rng), i2 = random_tensor(5, 3, rng);
    Tape tape;

    CHECK(ddr_mm_loss(tape, {}).scalar() == 0.0);

    auto wrap = [&](const Tensor& u, const Tensor& i) {
        return std::make_pair(std::vector<Var>{tape.constant(u)}, std::vector<Var>{tape.constant(i)});
    };
    Var one = ddr_mm_loss(tape, {wrap(u1, i1)});
    Var single = ddr_loss(tape, {tape.constant(u1)}, {tape.constant(i1)});
    CHECK(one.scalar() == doctest::Approx(single.scalar()).epsilon(1e-12));

    Var two = ddr_mm_loss(tape, {wrap(u1, i1), wrap(u2, i2)});
    Var second = ddr_loss(tape, {tape.constant(u2)}, {tape.constant(i2)});
    CHECK(two.scalar() == doctest::Approx(single.scalar() + second.scalar()).epsilon(1e-12));
}

TEST_CASE("total loss is the weighted component sum") {
    Tape tape;
    auto scalar = [&](double v) { return tape.constant(Tensor(1, 1, v)); };
    LossComponents parts;
    parts.bpr = scalar(2.0);
    parts.hcl_user = scalar(0.5);
    parts.hcl_item = scalar(0.25);
    parts.ddr = scalar(4.0);
    parts.ddr_mm = scalar(8.0);

    LossWeights off;
    off.omega = off.beta = off.delta = 0.0;
    CHECK(total_loss(tape, parts, off).scalar() == 2.0);

    LossWeights weights;
    weights.omega = 0.1;
    weights.beta = 0.01;
    weights.delta = 0.001;
    const double expected = 2.0 + 0.1 * 0.75 + 0.01 * 4.0 + 0.001 * 8.0;
    CHECK(total_loss(tape, parts, weights).scalar() == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("ranking loss gradients pass the finite-difference oracle") {
    const int p = 4, q = 5, d = 3;
    Rng rng(90);
    Tensor e_star = random_tensor(p + q, d, rng);
    TripleBatch batch;
    batch.triples = {{0, 0, 1}, {1, 2, 3}, {2, 4, 0}, {3, 1, 2}, {0, 3, 4}};

    const double err = check_gradient(
        [&](Tape& t, const std::map<std::string, Var>& v) {
            return bpr_loss(t, v.at("E"), p, batch, 1e-3, v);
        },
        {{"E", e_star}});
    CHECK(err < 1e-5);
}

TEST_CASE("de-redundancy gradients pass the finite-difference oracle") {
    Rng rng(91);
    Tensor layer0 = random_tensor(9, 4, rng);
    Tensor layer1 = random_tensor(9, 4, rng);

    // The adaptive coefficients are constants to the tape, so the oracle
    // pins the snapshot taken at the base point.
    DdrCoefficients mu;
    {
        Tape t;
        auto [users, items] = split_layers(t, {t.constant(layer0), t.constant(layer1)}, 5);
        mu = ddr_coefficients(users, items);
    }
    const double err = check_gradient(
        [&](Tape& t, const std::map<std::string, Var>& v) {
            auto [users, items] = split_layers(t, {v.at("l0"), v.at("l1")}, 5);
            return ddr_loss(t, users, items, mu.first, mu.second);
        },
        {{"l0", layer0}, {"l1", layer1}});
    CHECK(err < 1e-4);

    // At the base point the adaptive and pinned forms agree exactly.
    Tape t;
    auto [users, items] = split_layers(t, {t.constant(layer0), t.constant(layer1)}, 5);
    CHECK(ddr_loss(t, users, items).scalar() ==
          doctest::Approx(ddr_loss(t, users, items, mu.first, mu.second).scalar()).epsilon(1e-14));
}

TEST_CASE("the full objective passes finite differences on a 5-user/4-item instance") {
    Rng rng(58);
    const int p = 5, q = 4;
    std::vector<Interaction> pairs;
    for (int u = 0; u < p; ++u) {
        pairs.emplace_back(u, rng.next_int(q));
        for (int i = 0; i < q; ++i)
            if (rng.next_double() < 0.35) pairs.emplace_back(u, i);
    }
    for (int i = 0; i < q; ++i) pairs.emplace_back(rng.next_int(p), i);
    const InteractionGraph graph = build_graph(pairs, p, q);

    ModalityFeatureBank feats;
    feats.features[Modality::visual] = random_tensor(q, 6, rng, -1.0, 1.0, false);
    feats.features[Modality::textual] = random_tensor(q, 6, rng, -1.0, 1.0, false);
    LocalConfig local;
    local.embedding_dim = 4;
    GlobalConfig global;
    global.hyperedges = 2;
    const ParameterSet params = init_parameters(model_dims(graph, feats, local, global), 90);
    TripleBatch batch;
    batch.triples = {{0, 0, 2}, {1, 1, 3}, {2, 3, 0}, {3, 2, 1}, {4, 0, 3}};
    LossWeights weights;
    weights.lambda_reg = 1e-3;
    weights.omega = 0.5;
    weights.beta = 0.3;
    weights.delta = 0.2;

    // Coefficient snapshot at the base point, pinned across perturbations.
    DdrCoefficients mu_id;
    std::vector<DdrCoefficients> mu_mm;
    {
        Tape tape;
        ForwardOptions opts;
        opts.train_mode = true;
        opts.dropout_seed = 777;
        const ForwardResult fwd = model_forward(tape, graph, feats, params, local, global, opts);
        auto [users, items] = split_layers(tape, fwd.id_layers, p);
        mu_id = ddr_coefficients(users, items);
        for (const auto& [m, layers] : fwd.modality_layers) {
            auto [mu, mi] = split_layers(tape, layers, p);
            mu_mm.push_back(ddr_coefficients(mu, mi));
        }
    }
    LossBuilder builder = [&](const std::map<std::string, Tensor>& values, GradientMap* grads) {
        Tape tape;
        ParameterSet ps;
        ps.tensors = values;
        ForwardOptions opts;
        opts.train_mode = true;
        opts.dropout_seed = 777;
        const ForwardResult fwd = model_forward(tape, graph, feats, ps, local, global, opts);
        LossComponents parts;
        parts.bpr = bpr_loss(tape, fwd.e_star, p, batch, weights.lambda_reg, fwd.params);
        parts.hcl_user = fwd.hcl_user;
        parts.hcl_item = fwd.hcl_item;
        auto [users, items] = split_layers(tape, fwd.id_layers, p);
        parts.ddr = ddr_loss(tape, users, items, mu_id.first, mu_id.second);
        std::vector<std::pair<std::vector<Var>, std::vector<Var>>> split;
        for (const auto& [m, layers] : fwd.modality_layers)
            split.push_back(split_layers(tape, layers, p));
        parts.ddr_mm = ddr_mm_loss(tape, split, mu_mm);
        Var loss = total_loss(tape, parts, weights);
        if (grads != nullptr) *grads = tape.backward(loss);
        return loss.scalar();
    };

    FiniteDiffOptions opts;
    opts.step = 1e-5;
    const FiniteDiffResult result = finite_diff_check(builder, params.tensors, opts);
    CHECK(result.max_relative_error < 1e-4);
}

TEST_CASE("contrastive gradients pass the finite-difference oracle") {
    Rng rng(92);
    Tensor a = random_tensor(5, 3, rng);
    Tensor b = random_tensor(5, 3, rng);

    const double err = check_gradient(
        [&](Tape& t, const std::map<std::string, Var>& v) {
            return contrastive_loss(t, v.at("a"), v.at("b"), 0.2);
        },
        {{"a", a}, {"b", b}});
    CHECK(err < 1e-4);
}
