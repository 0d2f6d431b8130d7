#include "mgnm/local_interaction.hpp"

namespace mgnm {

void LocalConfig::validate() const {
    if (embedding_dim < 1) throw UserError("local: embedding_dim must be >= 1");
    if (id_layers < 1) throw UserError("local: id_layers must be >= 1");
    if (modality_layer < 1 || modality_layer > id_layers)
        throw UserError("local: modality_layer must be in [1, id_layers], got " +
                        std::to_string(modality_layer));
    for (std::size_t i = 1; i < modalities.size(); ++i)
        if (modalities[i] == modalities[i - 1] || modalities[i] < modalities[i - 1])
            throw UserError("local: modality list must be unique and ordered");
}

std::vector<Var> propagate_id(Tape& tape, const InteractionGraph& graph, Var e_id, int layers) {
    if (layers < 1) throw Error("propagate_id: layer count must be >= 1");
    if (e_id.rows() != graph.node_count())
        throw ShapeError("propagate_id: " + e_id.value().shape_str() + " vs " +
                         std::to_string(graph.node_count()) + " graph nodes");
    std::vector<Var> result;
    result.reserve(layers + 1);
    result.push_back(e_id);
    for (int l = 0; l < layers; ++l) result.push_back(tape.spmm(graph.norm_adjacency, result.back()));
    return result;
}

Var combine_layers(Tape& tape, const std::vector<Var>& layers) {
    if (layers.empty()) throw Error("combine_layers: empty layer list");
    Var acc = layers[0];
    for (std::size_t l = 1; l < layers.size(); ++l) acc = tape.add(acc, layers[l]);
    return tape.scale(acc, 1.0 / static_cast<double>(layers.size()));
}

Var project_modality(Tape& tape, Var item_feats, Var projection) {
    return tape.matmul(item_feats, projection);
}

std::vector<Var> propagate_modality(Tape& tape, const InteractionGraph& graph, Var e_hat, int k) {
    if (k < 1) throw Error("propagate_modality: k must be >= 1, got " + std::to_string(k));
    return propagate_id(tape, graph, e_hat, k);
}

Var fuse_local(Tape& tape, Var e_loc_id, const std::vector<Var>& modality_embeddings, bool* warned) {
    if (modality_embeddings.empty()) {
        if (warned != nullptr) *warned = true;
        return e_loc_id;
    }
    Var sum = modality_embeddings[0];
    for (std::size_t m = 1; m < modality_embeddings.size(); ++m)
        sum = tape.add(sum, modality_embeddings[m]);
    return tape.add(e_loc_id, tape.row_normalize(sum));
}

}  // namespace mgnm
