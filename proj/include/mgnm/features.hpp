#pragma once

#include <map>
#include <string>

#include "mgnm/tensor.hpp"

namespace mgnm {

enum class Modality { visual, textual };

inline const char* to_string(Modality m) { return m == Modality::visual ? "visual" : "textual"; }

// Per-modality item feature matrices, one row per item id.
struct ModalityFeatureBank {
    std::map<Modality, Tensor> features;

    bool has(Modality m) const { return features.count(m) != 0; }
    const Tensor& at(Modality m) const {
        auto it = features.find(m);
        if (it == features.end()) throw Error(std::string("features: missing modality ") + to_string(m));
        return it->second;
    }
    int dim(Modality m) const { return at(m).cols(); }
};

}  // namespace mgnm
