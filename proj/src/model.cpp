#include "mgnm/model.hpp"

namespace mgnm {

Tensor& ParameterSet::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("params: unknown tensor '" + name + "'");
    return it->second;
}

const Tensor& ParameterSet::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("params: unknown tensor '" + name + "'");
    return it->second;
}

ModelDims model_dims(const InteractionGraph& graph, const ModalityFeatureBank& features,
                     const LocalConfig& local, const GlobalConfig& global) {
    local.validate();
    global.validate();
    ModelDims dims;
    dims.user_count = graph.user_count;
    dims.item_count = graph.item_count;
    dims.embedding_dim = local.embedding_dim;
    dims.hyperedges = global.hyperedges;
    for (Modality m : local.modalities) {
        const Tensor& feats = features.at(m);
        if (feats.rows() != graph.item_count)
            throw UserError(std::string("model: ") + to_string(m) + " features have " +
                            std::to_string(feats.rows()) + " rows for " +
                            std::to_string(graph.item_count) + " items");
        dims.modality_dims[m] = feats.cols();
    }
    return dims;
}

std::map<std::string, std::pair<int, int>> parameter_shapes(const ModelDims& dims) {
    const int d = dims.embedding_dim;
    std::map<std::string, std::pair<int, int>> shapes;
    shapes["E_id"] = {dims.user_count + dims.item_count, d};
    for (const auto& [m, d_m] : dims.modality_dims) {
        const std::string suffix = std::string(".") + to_string(m);
        shapes["W_m" + suffix] = {d_m, d};
        shapes["purifier.W1" + suffix] = {4 * d, d_m};
        shapes["purifier.b1" + suffix] = {1, 4 * d};
        shapes["purifier.W2" + suffix] = {d, 4 * d};
        shapes["purifier.b2" + suffix] = {1, d};
        shapes["hyper.T" + suffix] = {dims.hyperedges, d};
    }
    return shapes;
}

void check_parameter_shapes(const ParameterSet& params, const ModelDims& dims) {
    const auto expected = parameter_shapes(dims);
    for (const auto& [name, shape] : expected) {
        auto it = params.tensors.find(name);
        if (it == params.tensors.end()) throw UserError("params: missing tensor '" + name + "'");
        if (it->second.rows() != shape.first || it->second.cols() != shape.second)
            throw UserError("params: tensor '" + name + "' is " + it->second.shape_str() +
                            ", expected " + std::to_string(shape.first) + "x" +
                            std::to_string(shape.second));
    }
    for (const auto& [name, tensor] : params.tensors)
        if (!expected.count(name)) throw UserError("params: unexpected tensor '" + name + "'");
}

ForwardResult model_forward(Tape& tape, const InteractionGraph& graph,
                            const ModalityFeatureBank& features, const ParameterSet& params,
                            const LocalConfig& local, const GlobalConfig& global,
                            const ForwardOptions& opts) {
    local.validate();
    global.validate();

    ForwardResult result;
    for (const auto& [name, tensor] : params.tensors) result.params[name] = tape.leaf(name, tensor);

    const int p = graph.user_count;
    const int q = graph.item_count;
    Var e_id = result.params.at("E_id");

    // Local stage: collaborative propagation plus per-modality propagation
    // seeded with neighbor-mean user features over projected item features.
    result.id_layers = propagate_id(tape, graph, e_id, local.id_layers);
    Var e_loc_id = combine_layers(tape, result.id_layers);

    std::vector<Var> local_modality;
    std::map<Modality, Var> raw_feats;
    for (Modality m : local.modalities) {
        const std::string suffix = std::string(".") + to_string(m);
        Var feats = tape.constant(features.at(m));
        raw_feats.emplace(m, feats);
        Var projected = project_modality(tape, feats, result.params.at("W_m" + suffix));
        Var user_init = tape.spmm(graph.user_item_mean, projected);
        Var stacked = tape.concat_rows(user_init, projected);
        std::vector<Var> layers = propagate_modality(tape, graph, stacked, local.modality_layer);
        local_modality.push_back(layers.back());
        result.modality_layers.emplace_back(m, std::move(layers));
    }
    result.e_loc = fuse_local(tape, e_loc_id, local_modality, &result.fused_without_modalities);

    // Global stage: purifier gate, hyperedge affinities, dependency
    // propagation, per-modality stacking.
    Rng dropout_rng(opts.dropout_seed);
    Var e_id_items = tape.slice_rows(e_id, p, p + q);
    std::map<Modality, std::pair<Var, Var>> global_parts;
    std::vector<Var> global_stacks;
    for (Modality m : local.modalities) {
        const std::string suffix = std::string(".") + to_string(m);
        Var expanded = expand_features(tape, raw_feats.at(m), result.params.at("purifier.W1" + suffix),
                                       result.params.at("purifier.b1" + suffix));
        Var filtered = gate_filter(tape, e_id_items, expanded, result.params.at("purifier.W2" + suffix),
                                   result.params.at("purifier.b2" + suffix));
        Var h_items = item_hyperedges(tape, filtered, result.params.at("hyper.T" + suffix));
        Var h_users = user_hyperedges(tape, graph, h_items);
        auto [e_users, e_items] =
            hypergraph_propagate(tape, h_users, h_items, e_id_items, global.depth,
                                 global.dropout_rate, opts.train_mode, dropout_rng);
        global_parts.emplace(m, std::make_pair(e_users, e_items));
        global_stacks.push_back(fuse_global(tape, e_users, e_items));
    }
    result.e_star = fuse_final(tape, result.e_loc, global_stacks, global.alpha);

    if (global_parts.count(Modality::visual) && global_parts.count(Modality::textual)) {
        const auto& visual = global_parts.at(Modality::visual);
        const auto& textual = global_parts.at(Modality::textual);
        result.hcl_user = contrastive_loss(tape, visual.first, textual.first, global.tau);
        result.hcl_item = contrastive_loss(tape, visual.second, textual.second, global.tau);
    }
    return result;
}

}  // namespace mgnm
