#include "mgnm/losses.hpp"

#include <cmath>

namespace mgnm {

void LossWeights::validate() const {
    if (lambda_reg < 0.0 || omega < 0.0 || beta < 0.0 || delta < 0.0)
        throw UserError("loss: weights must be >= 0");
}

Var bpr_loss(Tape& tape, Var e_star, int user_count, const TripleBatch& batch, double lambda_reg,
             const std::map<std::string, Var>& reg_params) {
    if (batch.empty()) throw Error("bpr_loss: empty batch");
    const int nodes = e_star.rows();
    const int batch_size = static_cast<int>(batch.size());

    std::vector<SparseMatrix::Entry> pick_user, pick_pos, pick_neg;
    pick_user.reserve(batch.size());
    pick_pos.reserve(batch.size());
    pick_neg.reserve(batch.size());
    for (int b = 0; b < batch_size; ++b) {
        const auto& [u, i, j] = batch.triples[b];
        if (u < 0 || u >= user_count || user_count + i >= nodes || i < 0 || j < 0 ||
            user_count + j >= nodes)
            throw Error("bpr_loss: triple (" + std::to_string(u) + "," + std::to_string(i) + "," +
                        std::to_string(j) + ") out of range");
        pick_user.push_back({b, u, 1.0});
        pick_pos.push_back({b, user_count + i, 1.0});
        pick_neg.push_back({b, user_count + j, 1.0});
    }
    SparseMatrix su(batch_size, nodes, std::move(pick_user));
    SparseMatrix si(batch_size, nodes, std::move(pick_pos));
    SparseMatrix sj(batch_size, nodes, std::move(pick_neg));

    Var users = tape.spmm(su, e_star);
    Var pos = tape.spmm(si, e_star);
    Var neg = tape.spmm(sj, e_star);
    // Row-wise dot products give the score margins r_ui - r_uj.
    Var margins = tape.scale(tape.row_mean(tape.mul(users, tape.sub(pos, neg))),
                             static_cast<double>(e_star.cols()));
    Var ranking = tape.sum(tape.softplus(tape.scale(margins, -1.0)));

    if (lambda_reg == 0.0 || reg_params.empty()) return ranking;
    Var reg{};
    for (const auto& [name, var] : reg_params) {
        Var sq = tape.sum(tape.mul(var, var));
        reg = reg.valid() ? tape.add(reg, sq) : sq;
    }
    return tape.add(ranking, tape.scale(reg, lambda_reg));
}

Var column_correlation(Tape& tape, Var x) {
    if (x.rows() < 2) throw Error("column_correlation: needs at least 2 rows, got " + std::to_string(x.rows()));
    const int d = x.cols();
    Var centered = tape.sub(x, tape.col_mean(x));
    Var cov = tape.matmul(tape.transpose(centered), centered);  // d x d

    // 1/sqrt(var) via exp(-log(var)/2); the log floor at 1e-12 realizes the
    // zero-variance guard and zeroes its gradient in the clamped region.
    Var variances = tape.scale(tape.row_mean(tape.mul(cov, tape.constant(Tensor::identity(d)))),
                               static_cast<double>(d));  // d x 1
    Var inv_std = tape.exp(tape.scale(tape.log(variances), -0.5));
    Var normalized = tape.mul(tape.mul(cov, inv_std), tape.transpose(inv_std));

    Tensor offdiag(d, d, 1.0);
    for (int i = 0; i < d; ++i) offdiag(i, i) = 0.0;
    return tape.add(tape.mul(normalized, tape.constant(std::move(offdiag))),
                    tape.constant(Tensor::identity(d)));
}

Var p_cov(Tape& tape, Var x) {
    Var corr = column_correlation(tape, x);
    Var diff = tape.sub(corr, tape.constant(Tensor::identity(x.cols())));
    return tape.scale(tape.frobenius_norm(diff), 1.0 / std::sqrt(2.0));
}

std::vector<double> layer_coefficients(const std::vector<double>& pcov_values) {
    if (pcov_values.empty()) throw Error("layer_coefficients: empty input");
    std::vector<double> inverses;
    inverses.reserve(pcov_values.size());
    double total = 0.0;
    for (double v : pcov_values) {
        const double inv = 1.0 / std::max(v, Tape::kEps);
        inverses.push_back(inv);
        total += inv;
    }
    for (double& v : inverses) v /= total;
    return inverses;
}

std::pair<std::vector<Var>, std::vector<Var>> split_layers(Tape& tape, const std::vector<Var>& layers,
                                                           int user_count) {
    std::vector<Var> users, items;
    users.reserve(layers.size());
    items.reserve(layers.size());
    for (Var layer : layers) {
        users.push_back(tape.slice_rows(layer, 0, user_count));
        items.push_back(tape.slice_rows(layer, user_count, layer.rows()));
    }
    return {std::move(users), std::move(items)};
}

namespace {

void check_layer_lists(const std::vector<Var>& user_layers, const std::vector<Var>& item_layers) {
    if (user_layers.size() != item_layers.size())
        throw Error("ddr_loss: " + std::to_string(user_layers.size()) + " user layers vs " +
                    std::to_string(item_layers.size()) + " item layers");
    if (user_layers.empty()) throw Error("ddr_loss: empty layer lists");
}

}  // namespace

DdrCoefficients ddr_coefficients(const std::vector<Var>& user_layers,
                                 const std::vector<Var>& item_layers) {
    check_layer_lists(user_layers, item_layers);
    Tape scratch;
    std::vector<double> user_values, item_values;
    for (std::size_t l = 0; l < user_layers.size(); ++l) {
        user_values.push_back(p_cov(scratch, scratch.constant(user_layers[l].value())).scalar());
        item_values.push_back(p_cov(scratch, scratch.constant(item_layers[l].value())).scalar());
    }
    return {layer_coefficients(user_values), layer_coefficients(item_values)};
}

Var ddr_loss(Tape& tape, const std::vector<Var>& user_layers, const std::vector<Var>& item_layers,
             const std::vector<double>& mu_users, const std::vector<double>& mu_items) {
    check_layer_lists(user_layers, item_layers);
    if (mu_users.size() != user_layers.size() || mu_items.size() != item_layers.size())
        throw Error("ddr_loss: coefficient count does not match the layer count");

    Var acc{};
    for (std::size_t l = 0; l < user_layers.size(); ++l) {
        Var term = tape.add(tape.scale(p_cov(tape, user_layers[l]), mu_users[l]),
                            tape.scale(p_cov(tape, item_layers[l]), mu_items[l]));
        acc = acc.valid() ? tape.add(acc, term) : term;
    }
    return acc;
}

Var ddr_loss(Tape& tape, const std::vector<Var>& user_layers, const std::vector<Var>& item_layers) {
    const DdrCoefficients mu = ddr_coefficients(user_layers, item_layers);
    return ddr_loss(tape, user_layers, item_layers, mu.first, mu.second);
}

Var ddr_mm_loss(Tape& tape,
                const std::vector<std::pair<std::vector<Var>, std::vector<Var>>>& per_modality_layers) {
    if (per_modality_layers.empty()) return zero_scalar(tape);
    Var acc{};
    for (const auto& [users, items] : per_modality_layers) {
        Var term = ddr_loss(tape, users, items);
        acc = acc.valid() ? tape.add(acc, term) : term;
    }
    return acc;
}

Var ddr_mm_loss(Tape& tape,
                const std::vector<std::pair<std::vector<Var>, std::vector<Var>>>& per_modality_layers,
                const std::vector<DdrCoefficients>& coefficients) {
    if (per_modality_layers.size() != coefficients.size())
        throw Error("ddr_mm_loss: coefficient sets do not match the modality count");
    if (per_modality_layers.empty()) return zero_scalar(tape);
    Var acc{};
    for (std::size_t m = 0; m < per_modality_layers.size(); ++m) {
        const auto& [users, items] = per_modality_layers[m];
        Var term = ddr_loss(tape, users, items, coefficients[m].first, coefficients[m].second);
        acc = acc.valid() ? tape.add(acc, term) : term;
    }
    return acc;
}

Var zero_scalar(Tape& tape) { return tape.constant(Tensor(1, 1)); }

Var total_loss(Tape& tape, const LossComponents& parts, const LossWeights& weights) {
    weights.validate();
    Var loss = parts.bpr;
    loss = tape.add(loss, tape.scale(tape.add(parts.hcl_user, parts.hcl_item), weights.omega));
    loss = tape.add(loss, tape.scale(parts.ddr, weights.beta));
    loss = tape.add(loss, tape.scale(parts.ddr_mm, weights.delta));
    return loss;
}

}  // namespace mgnm
