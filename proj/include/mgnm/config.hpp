#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mgnm/trainer.hpp"

namespace mgnm {

// Whole-run configuration, read from a key=value file with dotted section
// names (train.learning_rate=0.001). Every key has a default; unknown keys
// are an error. dump() emits the canonical form that parse() round-trips.
struct RunConfig {
    // Raw inputs consumed by `prepare`.
    std::string data_interactions = "mgnm_out/synth/interactions.tsv";
    std::string data_visual = "mgnm_out/synth/visual.feat";
    std::string data_textual = "mgnm_out/synth/textual.feat";
    // Prepared dataset directory (written by `prepare`, read by the rest).
    std::string data_dir = "mgnm_out/prepared";
    // Run artifacts: checkpoint, reports, training log.
    std::string run_dir = "mgnm_out/run";
    std::string synth_dir = "mgnm_out/synth";

    SynthConfig synth;
    LocalConfig local;
    GlobalConfig global;
    LossWeights weights;

    double learning_rate = 0.001;
    int batch_size = 256;
    int max_epochs = 30;
    int patience = 5;
    std::uint64_t seed = 42;

    std::vector<int> eval_ks = {5, 10, 20, 50};

    static RunConfig from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);
    static RunConfig from_file(const std::string& path,
                               const std::vector<std::pair<std::string, std::string>>& overrides = {});

    // Canonical key=value form; parse(dump()) reproduces the config exactly.
    std::string dump() const;
    // Hash over the model/global/loss/train sections; stamps reports and
    // guards checkpoints against config switches.
    std::uint64_t fingerprint() const;

    TrainConfig train_config() const;
    void validate() const;
};

// "both" | "text" | "image" | "none" <-> modality lists.
std::vector<Modality> parse_modalities(const std::string& token);
std::string modalities_token(const std::vector<Modality>& modalities);

}  // namespace mgnm
