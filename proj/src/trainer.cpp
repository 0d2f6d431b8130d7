#include "mgnm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mgnm/eval.hpp"

namespace mgnm {

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw UserError("train: learning_rate must be > 0");
    if (batch_size < 1) throw UserError("train: batch_size must be >= 1");
    if (max_epochs < 1) throw UserError("train: max_epochs must be >= 1");
    if (patience < 1) throw UserError("train: patience must be >= 1");
    weights.validate();
    local.validate();
    global.validate();
}

Tensor xavier_init(int rows, int cols, std::uint64_t seed) {
    if (rows < 1 || cols < 1)
        throw Error("xavier_init: dims must be positive, got " + std::to_string(rows) + "x" + std::to_string(cols));
    const double bound = std::sqrt(6.0 / (rows + cols));
    Rng rng(seed);
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(-bound, bound);
    t.requires_grad = true;
    return t;
}

ParameterSet init_parameters(const ModelDims& dims, std::uint64_t seed) {
    ParameterSet params;
    for (const auto& [name, shape] : parameter_shapes(dims)) {
        const std::uint64_t tensor_seed = mix_seed(seed, fnv1a(name.data(), name.size()));
        params.tensors[name] = xavier_init(shape.first, shape.second, tensor_seed);
    }
    return params;
}

TripleSampler::TripleSampler(const Dataset& dataset) : item_count_(dataset.item_count) {
    interacted_.assign(dataset.user_count, {});
    for (const auto& [u, i] : dataset.all_interactions()) interacted_[u].push_back(i);
    for (auto& items : interacted_) {
        std::sort(items.begin(), items.end());
        items.erase(std::unique(items.begin(), items.end()), items.end());
    }
    std::vector<bool> exhausted(dataset.user_count, false);
    for (int u = 0; u < dataset.user_count; ++u) {
        if (static_cast<int>(interacted_[u].size()) >= item_count_) {
            exhausted[u] = true;
            ++skipped_users_;
        }
    }
    for (const auto& [u, i] : dataset.train)
        if (!exhausted[u]) pairs_.emplace_back(u, i);
    if (pairs_.empty()) throw Error("sampler: no training pairs left to sample from");
}

TripleBatch TripleSampler::sample(int batch_size, Rng& rng) const {
    if (batch_size < 1) throw Error("sampler: batch_size must be >= 1");
    TripleBatch batch;
    batch.triples.reserve(batch_size);
    while (static_cast<int>(batch.triples.size()) < batch_size) {
        const auto& [u, i] = pairs_[rng.next_below(pairs_.size())];
        const auto& seen = interacted_[u];
        int negative = -1;
        for (int attempt = 0; attempt < 100; ++attempt) {
            const int j = rng.next_int(item_count_);
            if (!std::binary_search(seen.begin(), seen.end(), j)) {
                negative = j;
                break;
            }
        }
        if (negative < 0) continue;  // dense user; redraw the positive too
        batch.triples.push_back({u, i, negative});
    }
    return batch;
}

void adam_step(ParameterSet& params, const GradientMap& grads, OptimizerState& state,
               double learning_rate) {
    const long t = ++state.step;
    const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
    const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
    for (auto& [name, grad] : grads) {
        Tensor& value = params.at(name);
        if (!value.same_shape(grad))
            throw ShapeError("adam: gradient " + grad.shape_str() + " vs parameter " + value.shape_str() +
                             " for '" + name + "'");
        Tensor& m = state.first_moment[name];
        Tensor& v = state.second_moment[name];
        if (m.empty()) m = Tensor(value.rows(), value.cols());
        if (v.empty()) v = Tensor(value.rows(), value.cols());
        for (std::size_t k = 0; k < value.size(); ++k) {
            const double g = grad.at(k);
            m.at(k) = state.beta1 * m.at(k) + (1.0 - state.beta1) * g;
            v.at(k) = state.beta2 * v.at(k) + (1.0 - state.beta2) * g * g;
            const double m_hat = m.at(k) / bias1;
            const double v_hat = v.at(k) / bias2;
            value.at(k) -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
    }
}

namespace {

void check_finite(double value, const char* component, int epoch, int step) {
    if (std::isfinite(value)) return;
    throw Error(std::string("trainer: non-finite ") + component + " loss at epoch " +
                std::to_string(epoch) + " step " + std::to_string(step));
}

double validation_recall20(const Dataset& dataset, const InteractionGraph& graph,
                           const ParameterSet& params, const TrainConfig& config) {
    const Tensor e_star =
        eval_embeddings(graph, dataset.features, params, config.local, config.global);
    const MetricsReport report =
        evaluate(e_star, dataset.user_count, dataset.item_count, dataset.validation, dataset.train,
                 {20}, 0);
    return report.recall.at(20);
}

}  // namespace

Tensor eval_embeddings(const InteractionGraph& graph, const ModalityFeatureBank& features,
                       const ParameterSet& params, const LocalConfig& local, const GlobalConfig& global) {
    Tape tape;
    ForwardOptions opts;
    opts.train_mode = false;
    const ForwardResult fwd = model_forward(tape, graph, features, params, local, global, opts);
    return fwd.e_star.value();
}

FitResult fit(const Dataset& dataset, const TrainConfig& config) {
    config.validate();
    const InteractionGraph graph = build_graph(dataset.train, dataset.user_count, dataset.item_count);
    const ModelDims dims = model_dims(graph, dataset.features, config.local, config.global);

    FitResult result;
    ParameterSet params = init_parameters(dims, config.seed);
    OptimizerState state;
    TripleSampler sampler(dataset);

    const int batches_per_epoch =
        static_cast<int>((dataset.train.size() + config.batch_size - 1) / config.batch_size);
    int stale_epochs = 0;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        EpochRecord record;
        record.epoch = epoch;
        for (int step = 0; step < batches_per_epoch; ++step) {
            const std::uint64_t step_index =
                (static_cast<std::uint64_t>(epoch) << 32) | static_cast<std::uint64_t>(step);
            Rng sample_rng(mix_seed(config.seed, step_index));
            const TripleBatch batch = sampler.sample(config.batch_size, sample_rng);

            Tape tape;
            ForwardOptions opts;
            opts.train_mode = true;
            opts.dropout_seed = mix_seed(config.seed ^ 0xD80F5EEDULL, step_index);
            const ForwardResult fwd =
                model_forward(tape, graph, dataset.features, params, config.local, config.global, opts);

            LossComponents parts;
            parts.bpr = bpr_loss(tape, fwd.e_star, graph.user_count, batch, config.weights.lambda_reg,
                                 fwd.params);
            parts.hcl_user = fwd.hcl_user.valid() ? fwd.hcl_user : zero_scalar(tape);
            parts.hcl_item = fwd.hcl_item.valid() ? fwd.hcl_item : zero_scalar(tape);
            auto [id_users, id_items] = split_layers(tape, fwd.id_layers, graph.user_count);
            parts.ddr = ddr_loss(tape, id_users, id_items);
            std::vector<std::pair<std::vector<Var>, std::vector<Var>>> modality_split;
            for (const auto& [m, layers] : fwd.modality_layers)
                modality_split.push_back(split_layers(tape, layers, graph.user_count));
            parts.ddr_mm = ddr_mm_loss(tape, modality_split);
            Var total = total_loss(tape, parts, config.weights);

            check_finite(parts.bpr.scalar(), "bpr", epoch, step);
            check_finite(parts.hcl_user.scalar(), "hcl_user", epoch, step);
            check_finite(parts.hcl_item.scalar(), "hcl_item", epoch, step);
            check_finite(parts.ddr.scalar(), "ddr", epoch, step);
            check_finite(parts.ddr_mm.scalar(), "ddr_mm", epoch, step);
            check_finite(total.scalar(), "total", epoch, step);

            record.bpr += parts.bpr.scalar();
            record.hcl_user += parts.hcl_user.scalar();
            record.hcl_item += parts.hcl_item.scalar();
            record.ddr += parts.ddr.scalar();
            record.ddr_mm += parts.ddr_mm.scalar();
            record.total += total.scalar();

            const GradientMap grads = tape.backward(total);
            adam_step(params, grads, state, config.learning_rate);
        }
        record.bpr /= batches_per_epoch;
        record.hcl_user /= batches_per_epoch;
        record.hcl_item /= batches_per_epoch;
        record.ddr /= batches_per_epoch;
        record.ddr_mm /= batches_per_epoch;
        record.total /= batches_per_epoch;

        record.validation_recall20 = validation_recall20(dataset, graph, params, config);
        if (result.log.empty() || record.validation_recall20 > result.best_validation_recall20) {
            result.best_validation_recall20 = record.validation_recall20;
            result.best_epoch = epoch;
            result.best_params = params;
            result.optimizer = state;
            record.improved = true;
            stale_epochs = 0;
        } else {
            ++stale_epochs;
        }
        result.log.push_back(record);
        if (stale_epochs >= config.patience) break;
    }
    return result;
}

// --- checkpointing ------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[] = "MGNM0001";

void append_u32_le(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void append_u64_le(std::string& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void append_f64_le(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    append_u64_le(out, bits);
}

class ByteReader {
public:
    ByteReader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(byte(off_ + b)) << (8 * b);
        off_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(byte(off_ + b)) << (8 * b);
        off_ += 8;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str(std::size_t len) {
        need(len);
        std::string s = bytes_.substr(off_, len);
        off_ += len;
        return s;
    }
    bool at_end() const { return off_ == bytes_.size(); }
    bool has(std::size_t n) const { return off_ + n <= bytes_.size(); }

private:
    unsigned char byte(std::size_t i) const { return static_cast<unsigned char>(bytes_[i]); }
    void need(std::size_t n) const {
        if (off_ + n > bytes_.size()) throw UserError("checkpoint: '" + path_ + "' is truncated");
    }
    const std::string& bytes_;
    std::string path_;
    std::size_t off_ = 0;
};

void append_record(std::string& out, const std::string& name, const Tensor& tensor) {
    append_u32_le(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    append_u32_le(out, static_cast<std::uint32_t>(tensor.rows()));
    append_u32_le(out, static_cast<std::uint32_t>(tensor.cols()));
    for (std::size_t i = 0; i < tensor.size(); ++i) append_f64_le(out, tensor.at(i));
}

}  // namespace

void checkpoint_save(const std::string& path, const ParameterSet& params, const OptimizerState& state,
                     std::uint64_t config_hash) {
    std::map<std::string, Tensor> records;
    for (const auto& [name, tensor] : params.tensors) records["param." + name] = tensor;
    for (const auto& [name, tensor] : state.first_moment) records["adam.m." + name] = tensor;
    for (const auto& [name, tensor] : state.second_moment) records["adam.v." + name] = tensor;
    records["adam.step"] = Tensor(1, 1, static_cast<double>(state.step));

    std::string out;
    out.append(kCheckpointMagic, 8);
    append_u64_le(out, config_hash);
    for (const auto& [name, tensor] : records) append_record(out, name, tensor);
    atomic_write(path, out);
}

void checkpoint_load(const std::string& path, std::uint64_t expected_hash, ParameterSet& params,
                     OptimizerState& state) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 16 || bytes.compare(0, 8, kCheckpointMagic) != 0)
        throw UserError("checkpoint: '" + path + "' has a bad magic header");
    ByteReader reader(bytes, path);
    reader.str(8);  // magic
    const std::uint64_t hash = reader.u64();
    if (hash != expected_hash)
        throw UserError("checkpoint: '" + path + "' was written with a different configuration");

    params = ParameterSet{};
    state = OptimizerState{};
    bool saw_step = false;
    while (!reader.at_end()) {
        const std::uint32_t name_len = reader.u32();
        const std::string name = reader.str(name_len);
        const std::uint32_t rows = reader.u32();
        const std::uint32_t cols = reader.u32();
        if (!reader.has(static_cast<std::size_t>(rows) * cols * 8))
            throw UserError("checkpoint: '" + path + "' is truncated inside '" + name + "'");
        Tensor tensor(static_cast<int>(rows), static_cast<int>(cols));
        for (std::size_t i = 0; i < tensor.size(); ++i) tensor.at(i) = reader.f64();
        if (name == "adam.step") {
            state.step = static_cast<long>(tensor(0, 0));
            saw_step = true;
        } else if (name.rfind("param.", 0) == 0) {
            tensor.requires_grad = true;
            params.tensors[name.substr(6)] = std::move(tensor);
        } else if (name.rfind("adam.m.", 0) == 0) {
            state.first_moment[name.substr(7)] = std::move(tensor);
        } else if (name.rfind("adam.v.", 0) == 0) {
            state.second_moment[name.substr(7)] = std::move(tensor);
        } else {
            throw UserError("checkpoint: '" + path + "' has an unknown record '" + name + "'");
        }
    }
    if (!saw_step || params.tensors.empty())
        throw UserError("checkpoint: '" + path + "' is missing required records");
}

}  // namespace mgnm
