#include "mgnm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace mgnm {

namespace {

// Kahan-compensated mean; evaluation order must not affect reports.
class CompensatedMean {
public:
    void add(double x) {
        const double y = x - compensation_;
        const double t = sum_ + y;
        compensation_ = (t - sum_) - y;
        sum_ = t;
        ++count_;
    }
    double value() const { return count_ == 0 ? 0.0 : sum_ / count_; }

private:
    double sum_ = 0.0;
    double compensation_ = 0.0;
    long count_ = 0;
};

}  // namespace

Tensor score_all(const Tensor& e_star, const std::vector<int>& user_ids, int user_count, int item_count) {
    if (e_star.rows() != user_count + item_count)
        throw ShapeError("score_all: " + e_star.shape_str() + " vs p+q=" +
                         std::to_string(user_count + item_count));
    const int d = e_star.cols();
    Tensor scores(static_cast<int>(user_ids.size()), item_count);
    for (std::size_t x = 0; x < user_ids.size(); ++x) {
        const int u = user_ids[x];
        if (u < 0 || u >= user_count) throw Error("score_all: user " + std::to_string(u) + " out of range");
        for (int i = 0; i < item_count; ++i) {
            double dot = 0.0;
            for (int c = 0; c < d; ++c) dot += e_star(u, c) * e_star(user_count + i, c);
            scores(static_cast<int>(x), i) = dot;
        }
    }
    return scores;
}

void mask_scores(Tensor& scores, const std::vector<int>& user_ids,
                 const std::vector<std::vector<int>>& masked_items) {
    for (std::size_t x = 0; x < user_ids.size(); ++x) {
        const int u = user_ids[x];
        if (u < 0 || u >= static_cast<int>(masked_items.size())) continue;
        for (int i : masked_items[u]) scores(static_cast<int>(x), i) = -std::numeric_limits<double>::infinity();
    }
}

std::vector<std::vector<int>> rank_items(const Tensor& scores, int k) {
    std::vector<std::vector<int>> ranked(scores.rows());
    std::vector<int> order(scores.cols());
    for (int r = 0; r < scores.rows(); ++r) {
        std::iota(order.begin(), order.end(), 0);
        const int take = std::min(k, scores.cols());
        auto better = [&](int a, int b) {
            const double sa = scores(r, a), sb = scores(r, b);
            return sa != sb ? sa > sb : a < b;
        };
        std::partial_sort(order.begin(), order.begin() + take, order.end(), better);
        auto& row = ranked[r];
        for (int x = 0; x < take; ++x) {
            if (std::isinf(scores(r, order[x])) && scores(r, order[x]) < 0) break;
            row.push_back(order[x]);
        }
    }
    return ranked;
}

double recall_at_k(const std::vector<std::vector<int>>& ranked,
                   const std::vector<std::vector<int>>& truth, int k) {
    if (ranked.size() != truth.size()) throw Error("recall_at_k: list size mismatch");
    CompensatedMean mean;
    for (std::size_t u = 0; u < ranked.size(); ++u) {
        if (truth[u].empty()) throw Error("recall_at_k: empty truth for evaluated row " + std::to_string(u));
        int hits = 0;
        const int take = std::min<std::size_t>(k, ranked[u].size());
        for (int x = 0; x < take; ++x)
            if (std::binary_search(truth[u].begin(), truth[u].end(), ranked[u][x])) ++hits;
        mean.add(static_cast<double>(hits) / static_cast<double>(truth[u].size()));
    }
    return mean.value();
}

double ndcg_at_k(const std::vector<std::vector<int>>& ranked,
                 const std::vector<std::vector<int>>& truth, int k) {
    if (ranked.size() != truth.size()) throw Error("ndcg_at_k: list size mismatch");
    CompensatedMean mean;
    for (std::size_t u = 0; u < ranked.size(); ++u) {
        if (truth[u].empty()) throw Error("ndcg_at_k: empty truth for evaluated row " + std::to_string(u));
        double dcg = 0.0;
        const int take = std::min<std::size_t>(k, ranked[u].size());
        for (int x = 0; x < take; ++x)
            if (std::binary_search(truth[u].begin(), truth[u].end(), ranked[u][x]))
                dcg += 1.0 / std::log2(static_cast<double>(x) + 2.0);
        double ideal = 0.0;
        const int ideal_hits = std::min<int>(k, static_cast<int>(truth[u].size()));
        for (int r = 1; r <= ideal_hits; ++r) ideal += 1.0 / std::log2(static_cast<double>(r) + 1.0);
        mean.add(dcg / ideal);
    }
    return mean.value();
}

MetricsReport evaluate(const Tensor& e_star, int user_count, int item_count,
                       const std::vector<Interaction>& truth_pairs,
                       const std::vector<Interaction>& mask_pairs, const std::vector<int>& ks,
                       std::uint64_t config_fingerprint) {
    if (ks.empty()) throw Error("evaluate: empty K list");
    std::vector<std::vector<int>> truth_by_user(user_count), mask_by_user(user_count);
    for (const auto& [u, i] : truth_pairs) truth_by_user[u].push_back(i);
    for (const auto& [u, i] : mask_pairs) mask_by_user[u].push_back(i);

    std::vector<int> users;
    for (int u = 0; u < user_count; ++u) {
        if (truth_by_user[u].empty()) continue;
        std::sort(truth_by_user[u].begin(), truth_by_user[u].end());
        users.push_back(u);
    }

    MetricsReport report;
    report.ks = ks;
    report.config_fingerprint = config_fingerprint;
    report.evaluated_users = static_cast<int>(users.size());
    if (users.empty()) {
        for (int k : ks) {
            report.recall[k] = 0.0;
            report.ndcg[k] = 0.0;
        }
        return report;
    }

    Tensor scores = score_all(e_star, users, user_count, item_count);
    mask_scores(scores, users, mask_by_user);
    const int k_max = *std::max_element(ks.begin(), ks.end());
    std::vector<std::vector<int>> ranked = rank_items(scores, k_max);

    std::vector<std::vector<int>> truth;
    truth.reserve(users.size());
    for (int u : users) truth.push_back(truth_by_user[u]);

    for (int k : ks) {
        report.recall[k] = recall_at_k(ranked, truth, k);
        report.ndcg[k] = ndcg_at_k(ranked, truth, k);
    }
    return report;
}

std::string format_report_table(const MetricsReport& report) {
    char line[128];
    std::string out;
    std::snprintf(line, sizeof(line), "%6s  %10s  %10s\n", "K", "Recall", "NDCG");
    out += line;
    for (int k : report.ks) {
        std::snprintf(line, sizeof(line), "%6d  %10.6f  %10.6f\n", k, report.recall.at(k), report.ndcg.at(k));
        out += line;
    }
    std::snprintf(line, sizeof(line), "users evaluated: %d\n", report.evaluated_users);
    out += line;
    return out;
}

std::string format_report_kv(const MetricsReport& report) {
    char line[128];
    std::string out;
    for (int k : report.ks) {
        std::snprintf(line, sizeof(line), "recall.%d=%.17g\n", k, report.recall.at(k));
        out += line;
        std::snprintf(line, sizeof(line), "ndcg.%d=%.17g\n", k, report.ndcg.at(k));
        out += line;
    }
    std::snprintf(line, sizeof(line), "users=%d\n", report.evaluated_users);
    out += line;
    std::snprintf(line, sizeof(line), "fingerprint=%016llx\n",
                  static_cast<unsigned long long>(report.config_fingerprint));
    out += line;
    return out;
}

}  // namespace mgnm
