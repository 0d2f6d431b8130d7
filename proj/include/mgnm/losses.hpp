#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mgnm/tape.hpp"

namespace mgnm {

// Training triples (user, positive item, negative item); the positive is an
// observed training pair, the negative is unobserved in every split.
struct TripleBatch {
    std::vector<std::array<int, 3>> triples;

    std::size_t size() const { return triples.size(); }
    bool empty() const { return triples.empty(); }
};

struct LossWeights {
    double lambda_reg = 1e-4;  // L2 on the parameters inside the ranking loss
    double omega = 1e-4;       // contrastive terms
    double beta = 1e-4;        // collaborative de-redundancy
    double delta = 1e-4;       // modality de-redundancy

    void validate() const;
};

// Pairwise ranking loss over the batch, scores r_ui = <E*_u, E*_{p+i}>:
//   sum -ln sigmoid(r_ui - r_uj) + lambda * sum_theta ||theta||^2
// reg_params are the parameter leaves entering the L2 term.
Var bpr_loss(Tape& tape, Var e_star, int user_count, const TripleBatch& batch, double lambda_reg,
             const std::map<std::string, Var>& reg_params);

// Pearson correlation matrix of the columns of x (n x d -> d x d). Zero
// variances are floored at 1e-12 so constant columns correlate to 0; the
// diagonal is forced to exactly 1.
Var column_correlation(Tape& tape, Var x);

// (1/sqrt(2)) * ||P_R - I||_F: 0 for decorrelated columns, grows with
// redundancy between embedding dimensions.
Var p_cov(Tape& tape, Var x);

// Inverse-correlation weights mu_l = (1/p_l) / sum_i (1/p_i), computed on
// detached values: the coefficients weight the penalty terms but are not a
// gradient path themselves.
std::vector<double> layer_coefficients(const std::vector<double>& pcov_values);

// Cuts each (p+q) x d layer matrix into its user and item blocks.
std::pair<std::vector<Var>, std::vector<Var>> split_layers(Tape& tape, const std::vector<Var>& layers,
                                                           int user_count);

// sum_l mu_U^l p_cov(user layer l) + mu_I^l p_cov(item layer l), with the
// coefficients recomputed (and detached) from the current values.
Var ddr_loss(Tape& tape, const std::vector<Var>& user_layers, const std::vector<Var>& item_layers);

// Same penalty with caller-pinned coefficients. Finite-difference fixtures
// need this form: perturbing an input must not move the weights the tape
// treated as constants.
Var ddr_loss(Tape& tape, const std::vector<Var>& user_layers, const std::vector<Var>& item_layers,
             const std::vector<double>& mu_users, const std::vector<double>& mu_items);

using DdrCoefficients = std::pair<std::vector<double>, std::vector<double>>;

// Coefficient snapshot at the current values, for the pinned form above.
DdrCoefficients ddr_coefficients(const std::vector<Var>& user_layers,
                                 const std::vector<Var>& item_layers);

// Same penalty summed over modalities; an empty list yields zero.
Var ddr_mm_loss(Tape& tape,
                const std::vector<std::pair<std::vector<Var>, std::vector<Var>>>& per_modality_layers);

// Pinned-coefficient variant, one coefficient pair per modality.
Var ddr_mm_loss(Tape& tape,
                const std::vector<std::pair<std::vector<Var>, std::vector<Var>>>& per_modality_layers,
                const std::vector<DdrCoefficients>& coefficients);

// 1x1 zero constant; stands in for loss terms a configuration disables.
Var zero_scalar(Tape& tape);

struct LossComponents {
    Var bpr;
    Var hcl_user;
    Var hcl_item;
    Var ddr;
    Var ddr_mm;
};

// L = bpr + omega (hcl_u + hcl_i) + beta ddr + delta ddr_mm.
Var total_loss(Tape& tape, const LossComponents& parts, const LossWeights& weights);

}  // namespace mgnm
