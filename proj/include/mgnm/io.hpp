#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mgnm/features.hpp"
#include "mgnm/graph.hpp"

namespace mgnm {

// Interaction text format: one "user<TAB>item" pair per line, 0-based ids,
// lines starting with '#' ignored. Errors carry 1-based line numbers.
std::vector<Interaction> load_interactions(const std::string& path);
void save_interactions(const std::string& path, const std::vector<Interaction>& triples);

// Feature binary format: magic "MMFT0001", u32 row count, u32 dim, then
// row-major float32 payload, all little-endian. Exact length enforced.
Tensor load_features(const std::string& path, int expected_items);
void save_features(const std::string& path, const Tensor& features);

// Writes via a temp file + rename so readers never see partial content.
void atomic_write(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

// A prepared dataset directory: dense ids, per-user splits, features.
struct Dataset {
    int user_count = 0;
    int item_count = 0;
    std::vector<Interaction> train;
    std::vector<Interaction> validation;
    std::vector<Interaction> test;
    ModalityFeatureBank features;

    std::vector<Interaction> all_interactions() const;
};

// Loads train/valid/test plus the requested modality features from a
// directory written by prepare_dataset.
Dataset load_prepared(const std::string& dir, const std::vector<Modality>& wanted);

struct PrepareStats {
    int raw_users = 0;
    int raw_items = 0;
    int kept_users = 0;
    int kept_items = 0;
    int excluded_users = 0;      // fewer than 3 interactions
    int dropped_eval_pairs = 0;  // val/test pairs whose item never occurs in train
};

// Filters users with < 3 interactions, remaps ids to a dense range, splits
// 8:1:1 per user, then drops items without any training occurrence (and the
// val/test pairs that referenced them) so the training graph covers every
// id. Feature rows are reordered to the new item order. Writes train.tsv,
// valid.tsv, test.tsv, <modality>.feat, user_map.tsv, item_map.tsv and
// manifest.txt into out_dir.
PrepareStats prepare_dataset(const std::string& interactions_path,
                             const std::map<Modality, std::string>& feature_paths, std::uint64_t seed,
                             const std::string& out_dir);

// Planted-block synthetic data: users and items are partitioned into
// `blocks` communities, in-block pairs interact with probability `within`,
// cross-block pairs with probability `noise`, and item features are the
// block centroid plus Gaussian jitter (so the modality signal is real).
struct SynthConfig {
    int users = 200;
    int items = 100;
    int blocks = 4;
    double within = 0.4;
    double noise = 0.05;
    double jitter = 0.5;
    int visual_dim = 32;
    int textual_dim = 16;
    std::uint64_t seed = 7;

    void validate() const;
};

struct SynthStats {
    int interactions = 0;
    int resampled_users = 0;  // users re-drawn for having < 3 interactions
};

// Writes interactions.tsv, visual.feat, textual.feat, synth.manifest.
SynthStats synth_dataset(const SynthConfig& config, const std::string& out_dir);

}  // namespace mgnm
