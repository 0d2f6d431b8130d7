#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mgnm/graph.hpp"
#include "mgnm/tensor.hpp"

namespace mgnm {

struct MetricsReport {
    std::vector<int> ks;
    std::map<int, double> recall;
    std::map<int, double> ndcg;
    int evaluated_users = 0;
    std::uint64_t config_fingerprint = 0;
};

// Inner-product scores r_ui = <E*_u, E*_{p+i}> for the given users against
// every item: one row per entry of user_ids.
Tensor score_all(const Tensor& e_star, const std::vector<int>& user_ids, int user_count, int item_count);

// Sets scores of per-user masked items to -infinity so they can never rank.
void mask_scores(Tensor& scores, const std::vector<int>& user_ids,
                 const std::vector<std::vector<int>>& masked_items);

// Top-k item ids per score row, ordered by descending score with ties
// broken by ascending item id. Masked (-inf) items never appear.
std::vector<std::vector<int>> rank_items(const Tensor& scores, int k);

// Mean over users of |top-k hits| / |truth|. Users with empty truth are the
// caller's to exclude (evaluate() already does).
double recall_at_k(const std::vector<std::vector<int>>& ranked,
                   const std::vector<std::vector<int>>& truth, int k);

// Binary-relevance NDCG: DCG = sum over hits of 1/log2(rank+1), normalized
// by the ideal DCG of min(k, |truth|) front-loaded hits.
double ndcg_at_k(const std::vector<std::vector<int>>& ranked,
                 const std::vector<std::vector<int>>& truth, int k);

// Full-ranking evaluation of truth_pairs with mask_pairs (their items are
// removed from each user's candidate list). Users without truth are skipped.
MetricsReport evaluate(const Tensor& e_star, int user_count, int item_count,
                       const std::vector<Interaction>& truth_pairs,
                       const std::vector<Interaction>& mask_pairs, const std::vector<int>& ks,
                       std::uint64_t config_fingerprint);

std::string format_report_table(const MetricsReport& report);
std::string format_report_kv(const MetricsReport& report);

}  // namespace mgnm
