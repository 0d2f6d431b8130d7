#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgnm/io.hpp"
#include "mgnm/losses.hpp"
#include "mgnm/model.hpp"

namespace mgnm {

struct TrainConfig {
    double learning_rate = 0.001;
    int batch_size = 256;
    int max_epochs = 30;
    int patience = 5;
    std::uint64_t seed = 42;
    LossWeights weights;
    LocalConfig local;
    GlobalConfig global;

    void validate() const;
};

struct OptimizerState {
    std::map<std::string, Tensor> first_moment;
    std::map<std::string, Tensor> second_moment;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Uniform samples in +-sqrt(6 / (rows + cols)); deterministic per seed.
Tensor xavier_init(int rows, int cols, std::uint64_t seed);

// All model tensors initialized with per-tensor seeds derived from the
// tensor name, so adding a modality does not reshuffle the others.
ParameterSet init_parameters(const ModelDims& dims, std::uint64_t seed);

// Uniform positives from the training pairs; negatives are rejection
// sampled from items the user never interacted with in any split. Users
// who interacted with every item are skipped (counted once at build).
class TripleSampler {
public:
    TripleSampler(const Dataset& dataset);

    TripleBatch sample(int batch_size, Rng& rng) const;
    int skipped_users() const { return skipped_users_; }
    std::size_t eligible_pairs() const { return pairs_.size(); }

private:
    int item_count_ = 0;
    std::vector<Interaction> pairs_;                 // positives eligible for sampling
    std::vector<std::vector<int>> interacted_;       // sorted, per user, across all splits
    int skipped_users_ = 0;
};

// One bias-corrected Adam update over every gradient entry; moments are
// created lazily and the shared step counter advances once per call.
void adam_step(ParameterSet& params, const GradientMap& grads, OptimizerState& state, double learning_rate);

struct EpochRecord {
    int epoch = 0;
    // Per-epoch means over batches; total always equals the weighted sum.
    double bpr = 0.0;
    double hcl_user = 0.0;
    double hcl_item = 0.0;
    double ddr = 0.0;
    double ddr_mm = 0.0;
    double total = 0.0;
    double validation_recall20 = 0.0;
    bool improved = false;
};

struct FitResult {
    ParameterSet best_params;
    OptimizerState optimizer;
    std::vector<EpochRecord> log;
    double best_validation_recall20 = 0.0;
    int best_epoch = 0;
};

// Full training loop: fresh tape per step, Adam updates, per-epoch
// validation Recall@20, early stop after `patience` epochs without
// improvement. Returns the parameters of the best validation epoch.
FitResult fit(const Dataset& dataset, const TrainConfig& config);

// Embeddings with dropout off, for scoring and evaluation.
Tensor eval_embeddings(const InteractionGraph& graph, const ModalityFeatureBank& features,
                       const ParameterSet& params, const LocalConfig& local, const GlobalConfig& global);

// Checkpoint file: magic "MGNM0001", u64 config hash, then sorted
// name/rows/cols/float64-payload records for parameters and optimizer
// moments. Round-trips bitwise.
void checkpoint_save(const std::string& path, const ParameterSet& params, const OptimizerState& state,
                     std::uint64_t config_hash);
void checkpoint_load(const std::string& path, std::uint64_t expected_hash, ParameterSet& params,
                     OptimizerState& state);

}  // namespace mgnm
