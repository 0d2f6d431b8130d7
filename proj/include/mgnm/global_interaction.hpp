#pragma once

#include <utility>

#include "mgnm/graph.hpp"
#include "mgnm/rng.hpp"
#include "mgnm/tape.hpp"

namespace mgnm {

// Settings for the purifier / hyperedge stage.
struct GlobalConfig {
    int hyperedges = 4;        // B, transformation-vector count
    int depth = 2;             // H, dependency propagation steps
    double dropout_rate = 0.2; // applied to the dependency matrices in training
    double tau = 0.2;          // contrastive temperature
    double alpha = 0.2;        // weight of the global embeddings in the fusion

    void validate() const;
};

// Affine lift of raw modality features into the 4d intermediate space:
// feats * W1^T + b1 (b1 broadcast over rows).
Var expand_features(Tape& tape, Var item_feats, Var w1, Var b1);

// Purifier gate: id_items .* sigmoid(expanded * W2^T + b2). Keeps the id
// embedding where the modality evidence opens the gate.
Var gate_filter(Tape& tape, Var e_id_items, Var expanded, Var w2, Var b2);

// Item-to-hyperedge affinities: filtered * T^T, one row per item.
Var item_hyperedges(Tape& tape, Var filtered, Var transform);

// User affinities as interaction-weighted means of their items' rows.
Var user_hyperedges(Tape& tape, const InteractionGraph& graph, Var item_affinities);

// Row-softmaxes the affinities and runs `depth` steps of
//   E_i <- Drop(Hi Hi^T) E_i,   E_u <- Drop(Hu Hi^T) E_i
// where both updates consume the item stream of the previous step.
// Dropout masks are drawn from rng only when train_mode and rate > 0.
// Returns (user embeddings p x d, item embeddings q x d) at the last step.
std::pair<Var, Var> hypergraph_propagate(Tape& tape, Var user_affinities, Var item_affinities,
                                         Var item_seed, int depth, double dropout_rate,
                                         bool train_mode, Rng& rng);

// Vertical stack [users; items] -> (p+q) x d, kept per modality.
Var fuse_global(Tape& tape, Var user_embeddings, Var item_embeddings);

// In-batch InfoNCE over rows with cosine similarity at temperature tau:
// row u matches b's row u against all rows of b. Returns the sum over rows.
Var contrastive_loss(Tape& tape, Var a, Var b, double tau);

// E* = E_loc + sum_m alpha * rownorm(E_glo_m).
Var fuse_final(Tape& tape, Var e_loc, const std::vector<Var>& global_embeddings, double alpha);

}  // namespace mgnm
