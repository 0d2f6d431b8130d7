#pragma once

#include <map>
#include <string>
#include <vector>

#include "mgnm/features.hpp"
#include "mgnm/global_interaction.hpp"
#include "mgnm/graph.hpp"
#include "mgnm/local_interaction.hpp"
#include "mgnm/tape.hpp"

namespace mgnm {

// All trainable tensors, keyed by stable names (map order fixes every
// iteration order in the trainer and checkpoints):
//   E_id                 (p+q) x d   user rows first, then item rows
//   W_m.<modality>       d_m x d     projection into the shared space
//   purifier.W1.<mod>    4d x d_m
//   purifier.b1.<mod>    1 x 4d
//   purifier.W2.<mod>    d x 4d
//   purifier.b2.<mod>    1 x d
//   hyper.T.<mod>        B x d       transformation vectors
struct ParameterSet {
    std::map<std::string, Tensor> tensors;

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
};

// Shapes the parameter tensors for a given dataset + config; used by the
// trainer's initializer and by checkpoint validation.
struct ModelDims {
    int user_count = 0;
    int item_count = 0;
    int embedding_dim = 0;
    int hyperedges = 0;
    std::map<Modality, int> modality_dims;
};

ModelDims model_dims(const InteractionGraph& graph, const ModalityFeatureBank& features,
                     const LocalConfig& local, const GlobalConfig& global);

// name -> (rows, cols) for every tensor the model trains.
std::map<std::string, std::pair<int, int>> parameter_shapes(const ModelDims& dims);

// Verifies a loaded parameter set against the expected inventory; raises
// UserError naming the first missing, extra, or misshapen tensor.
void check_parameter_shapes(const ParameterSet& params, const ModelDims& dims);

struct ForwardOptions {
    bool train_mode = false;
    std::uint64_t dropout_seed = 0;
};

struct ForwardResult {
    Var e_star;                       // (p+q) x d final embeddings
    Var e_loc;                        // local fusion before the global terms
    std::vector<Var> id_layers;       // collaborative layers 0..L
    // Per modality, propagation layers 0..k (for the modality DDR loss).
    std::vector<std::pair<Modality, std::vector<Var>>> modality_layers;
    Var hcl_user;                     // invalid unless both modalities run
    Var hcl_item;
    std::map<std::string, Var> params;  // registered leaves, for the L2 term
    bool fused_without_modalities = false;
};

// Runs the whole embedding pipeline on the tape: collaborative and modality
// propagation, the per-modality purifier + hyperedge path, contrastive
// terms, and the final fusion.
ForwardResult model_forward(Tape& tape, const InteractionGraph& graph,
                            const ModalityFeatureBank& features, const ParameterSet& params,
                            const LocalConfig& local, const GlobalConfig& global,
                            const ForwardOptions& opts);

}  // namespace mgnm
