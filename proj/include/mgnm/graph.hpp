#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mgnm/tensor.hpp"

namespace mgnm {

using Interaction = std::pair<int, int>;  // (user id, item id)

// Bipartite user-item interaction graph with its symmetric normalization.
// Node order everywhere: users 0..p-1 first, then items p..p+q-1.
// Immutable after build; safe for concurrent reads.
struct InteractionGraph {
    int user_count = 0;  // p
    int item_count = 0;  // q
    std::vector<Interaction> interactions;  // deduplicated, sorted
    std::vector<std::vector<int>> user_neighbors;  // item ids per user

    // (p+q) x (p+q), zero diagonal blocks, A[u][p+i] = A[p+i][u] = 1.
    SparseMatrix adjacency;
    // D^{-1/2} A D^{-1/2}.
    SparseMatrix norm_adjacency;
    // p x q with row u equal to 1/|N_u| on u's items; multiplying by an
    // item matrix yields per-user neighbor means.
    SparseMatrix user_item_mean;

    int node_count() const { return user_count + item_count; }
};

// Builds the graph from raw (user, item) pairs. Duplicates collapse to a
// single edge. Every user in [0,p) and item in [0,q) must end up with at
// least one interaction; zero-degree nodes are the caller's to filter out.
InteractionGraph build_graph(const std::vector<Interaction>& triples, int p, int q);

// Per-user arithmetic mean of the neighbors' feature rows. Eager variant;
// the training path runs the same aggregation through the tape via
// user_item_mean.
Tensor user_modality_init(const InteractionGraph& graph, const Tensor& item_feats);

struct SplitResult {
    std::vector<Interaction> train;
    std::vector<Interaction> validation;
    std::vector<Interaction> test;
    // Users dropped for having fewer than 3 interactions.
    int excluded_users = 0;
};

// Per-user 8:1:1 split: with n interactions, test and validation each get
// max(1, floor(n/10)) and train the remainder. Users with n < 3 are
// excluded and counted. Deterministic in the seed and independent of the
// input order of users.
SplitResult split_interactions(const std::vector<Interaction>& triples, std::uint64_t seed);

}  // namespace mgnm
