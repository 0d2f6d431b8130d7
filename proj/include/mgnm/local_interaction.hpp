#pragma once

#include <vector>

#include "mgnm/features.hpp"
#include "mgnm/graph.hpp"
#include "mgnm/tape.hpp"

namespace mgnm {

// Settings for the collaborative and modality propagation stage.
struct LocalConfig {
    int embedding_dim = 64;   // d
    int id_layers = 2;        // L, collaborative propagation depth
    int modality_layer = 1;   // k, the layer picked as the modality embedding
    std::vector<Modality> modalities = {Modality::visual, Modality::textual};

    // Throws UserError on out-of-range fields. An empty modality list is
    // allowed and degenerates to pure collaborative filtering.
    void validate() const;
};

// E^{l+1} = norm_adjacency * E^l; returns layers 0..L (all are needed by
// the de-redundancy loss).
std::vector<Var> propagate_id(Tape& tape, const InteractionGraph& graph, Var e_id, int layers);

// Arithmetic mean over propagation layers.
Var combine_layers(Tape& tape, const std::vector<Var>& layers);

// Plain right-multiplication into the shared d-dimensional space.
Var project_modality(Tape& tape, Var item_feats, Var projection);

// k applications of norm_adjacency starting from the stacked
// [user means; projected item features] matrix; returns layers 0..k.
std::vector<Var> propagate_modality(Tape& tape, const InteractionGraph& graph, Var e_hat, int k);

// E_loc = E_loc_id + rownorm(sum of modality embeddings). An empty modality
// list returns E_loc_id unchanged and sets *warned when given.
Var fuse_local(Tape& tape, Var e_loc_id, const std::vector<Var>& modality_embeddings, bool* warned = nullptr);

}  // namespace mgnm
