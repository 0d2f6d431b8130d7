#include "mgnm/global_interaction.hpp"

namespace mgnm {

void GlobalConfig::validate() const {
    if (hyperedges < 1) throw UserError("global: hyperedges must be >= 1");
    if (depth < 1) throw UserError("global: depth must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw UserError("global: dropout_rate must be in [0,1)");
    if (tau <= 0.0) throw UserError("global: tau must be > 0");
    if (alpha < 0.0) throw UserError("global: alpha must be >= 0");
}

Var expand_features(Tape& tape, Var item_feats, Var w1, Var b1) {
    return tape.add(tape.matmul(item_feats, tape.transpose(w1)), b1);
}

Var gate_filter(Tape& tape, Var e_id_items, Var expanded, Var w2, Var b2) {
    Var gate = tape.sigmoid(tape.add(tape.matmul(expanded, tape.transpose(w2)), b2));
    return tape.mul(e_id_items, gate);
}

Var item_hyperedges(Tape& tape, Var filtered, Var transform) {
    return tape.matmul(filtered, tape.transpose(transform));
}

Var user_hyperedges(Tape& tape, const InteractionGraph& graph, Var item_affinities) {
    if (item_affinities.rows() != graph.item_count)
        throw ShapeError("user_hyperedges: " + item_affinities.value().shape_str() + " vs q=" +
                         std::to_string(graph.item_count));
    return tape.spmm(graph.user_item_mean, item_affinities);
}

namespace {

Tensor draw_mask(Rng& rng, int rows, int cols, double rate) {
    Tensor mask(rows, cols);
    for (std::size_t i = 0; i < mask.size(); ++i) mask.at(i) = rng.next_double() >= rate ? 1.0 : 0.0;
    return mask;
}

}  // namespace

std::pair<Var, Var> hypergraph_propagate(Tape& tape, Var user_affinities, Var item_affinities,
                                         Var item_seed, int depth, double dropout_rate,
                                         bool train_mode, Rng& rng) {
    if (depth < 1) throw Error("hypergraph_propagate: depth must be >= 1");
    if (item_affinities.rows() != item_seed.rows())
        throw ShapeError("hypergraph_propagate: affinities " + item_affinities.value().shape_str() +
                         " vs seed " + item_seed.value().shape_str());

    Var hu = tape.row_softmax(user_affinities);
    Var hi = tape.row_softmax(item_affinities);
    Var hi_t = tape.transpose(hi);
    Var dep_items = tape.matmul(hi, hi_t);  // q x q
    Var dep_users = tape.matmul(hu, hi_t);  // p x q

    const double rate = train_mode ? dropout_rate : 0.0;
    const int p = user_affinities.rows();
    const int q = item_affinities.rows();

    Var e_items = item_seed;
    Var e_users{};
    for (int f = 0; f < depth; ++f) {
        // Mask order is fixed (users then items) so runs replay exactly.
        Tensor mask_users = rate > 0.0 ? draw_mask(rng, p, q, rate) : Tensor();
        Tensor mask_items = rate > 0.0 ? draw_mask(rng, q, q, rate) : Tensor();
        Var dep_u = tape.dropout(dep_users, mask_users, rate);
        Var dep_i = tape.dropout(dep_items, mask_items, rate);
        e_users = tape.matmul(dep_u, e_items);
        e_items = tape.matmul(dep_i, e_items);
    }
    return {e_users, e_items};
}

Var fuse_global(Tape& tape, Var user_embeddings, Var item_embeddings) {
    return tape.concat_rows(user_embeddings, item_embeddings);
}

Var contrastive_loss(Tape& tape, Var a, Var b, double tau) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) throw ShapeError("contrastive_loss: " + av.shape_str() + " vs " + bv.shape_str());
    if (av.rows() < 2) throw Error("contrastive_loss: needs at least 2 rows, got " + std::to_string(av.rows()));
    if (tau <= 0.0) throw Error("contrastive_loss: tau must be > 0");

    const int n = av.rows();
    Var an = tape.row_normalize(a);
    Var bn = tape.row_normalize(b);
    Var sims = tape.scale(tape.matmul(an, tape.transpose(bn)), 1.0 / tau);  // n x n
    // Row sums of exp(s/tau) give the denominators; masking with the
    // identity extracts the matched-pair terms for the numerators.
    Var denom = tape.scale(tape.row_mean(tape.exp(sims)), static_cast<double>(n));
    Var matched = tape.scale(tape.row_mean(tape.mul(sims, tape.constant(Tensor::identity(n)))),
                             static_cast<double>(n));
    return tape.sum(tape.sub(tape.log(denom), matched));
}

Var fuse_final(Tape& tape, Var e_loc, const std::vector<Var>& global_embeddings, double alpha) {
    Var out = e_loc;
    for (Var g : global_embeddings) out = tape.add(out, tape.scale(tape.row_normalize(g), alpha));
    return out;
}

}  // namespace mgnm
