#include "mgnm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mgnm/rng.hpp"

namespace mgnm {

InteractionGraph build_graph(const std::vector<Interaction>& triples, int p, int q) {
    if (triples.empty()) throw UserError("graph: no interactions given");
    if (p <= 0 || q <= 0)
        throw UserError("graph: user and item counts must be positive, got p=" + std::to_string(p) +
                        " q=" + std::to_string(q));

    InteractionGraph g;
    g.user_count = p;
    g.item_count = q;
    g.interactions = triples;
    for (const auto& [u, i] : g.interactions) {
        if (u < 0 || u >= p || i < 0 || i >= q)
            throw UserError("graph: interaction (" + std::to_string(u) + "," + std::to_string(i) +
                            ") outside p=" + std::to_string(p) + " q=" + std::to_string(q));
    }
    std::sort(g.interactions.begin(), g.interactions.end());
    g.interactions.erase(std::unique(g.interactions.begin(), g.interactions.end()), g.interactions.end());

    std::vector<int> degree(p + q, 0);
    g.user_neighbors.assign(p, {});
    for (const auto& [u, i] : g.interactions) {
        g.user_neighbors[u].push_back(i);
        ++degree[u];
        ++degree[p + i];
    }
    for (int u = 0; u < p; ++u)
        if (degree[u] == 0) throw UserError("graph: user " + std::to_string(u) + " has no interactions");
    for (int i = 0; i < q; ++i)
        if (degree[p + i] == 0) throw UserError("graph: item " + std::to_string(i) + " has no interactions");

    std::vector<SparseMatrix::Entry> adj;
    std::vector<SparseMatrix::Entry> norm;
    std::vector<SparseMatrix::Entry> mean;
    adj.reserve(2 * g.interactions.size());
    norm.reserve(2 * g.interactions.size());
    mean.reserve(g.interactions.size());
    for (const auto& [u, i] : g.interactions) {
        const int s = u, t = p + i;
        const double w = 1.0 / std::sqrt(static_cast<double>(degree[s]) * degree[t]);
        adj.push_back({s, t, 1.0});
        adj.push_back({t, s, 1.0});
        norm.push_back({s, t, w});
        norm.push_back({t, s, w});
        mean.push_back({u, i, 1.0 / degree[u]});
    }
    g.adjacency = SparseMatrix(p + q, p + q, std::move(adj));
    g.norm_adjacency = SparseMatrix(p + q, p + q, std::move(norm));
    g.user_item_mean = SparseMatrix(p, q, std::move(mean));
    return g;
}

Tensor user_modality_init(const InteractionGraph& graph, const Tensor& item_feats) {
    if (item_feats.rows() != graph.item_count)
        throw ShapeError("user_modality_init: features " + item_feats.shape_str() + " vs q=" +
                         std::to_string(graph.item_count));
    Tensor out(graph.user_count, item_feats.cols());
    for (int u = 0; u < graph.user_count; ++u) {
        const auto& neigh = graph.user_neighbors[u];
        if (neigh.empty()) throw Error("user_modality_init: user " + std::to_string(u) + " has no neighbors");
        for (int i : neigh)
            for (int c = 0; c < item_feats.cols(); ++c) out(u, c) += item_feats(i, c);
        for (int c = 0; c < item_feats.cols(); ++c) out(u, c) /= static_cast<double>(neigh.size());
    }
    return out;
}

SplitResult split_interactions(const std::vector<Interaction>& triples, std::uint64_t seed) {
    std::map<int, std::vector<int>> by_user;
    for (const auto& [u, i] : triples) by_user[u].push_back(i);

    SplitResult result;
    for (auto& [u, items] : by_user) {
        std::sort(items.begin(), items.end());
        items.erase(std::unique(items.begin(), items.end()), items.end());
        const int n = static_cast<int>(items.size());
        if (n < 3) {
            ++result.excluded_users;
            continue;
        }
        // Per-user shuffle keyed on (seed, user) so the outcome does not
        // depend on which other users are present.
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(u)));
        for (int i = n - 1; i > 0; --i) {
            const int j = rng.next_int(i + 1);
            std::swap(items[i], items[j]);
        }
        const int n_test = std::max(1, n / 10);
        const int n_val = n_test;
        for (int k = 0; k < n; ++k) {
            const Interaction pair{u, items[k]};
            if (k < n_test)
                result.test.push_back(pair);
            else if (k < n_test + n_val)
                result.validation.push_back(pair);
            else
                result.train.push_back(pair);
        }
    }
    std::sort(result.train.begin(), result.train.end());
    std::sort(result.validation.begin(), result.validation.end());
    std::sort(result.test.begin(), result.test.end());
    return result;
}

}  // namespace mgnm
