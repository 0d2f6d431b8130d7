#include "mgnm/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mgnm/rng.hpp"

namespace mgnm {

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw UserError("config: " + key + ": '" + value + "' is not a number");
    }
}

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long v = std::stol(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return static_cast<int>(v);
    } catch (const std::exception&) {
        throw UserError("config: " + key + ": '" + value + "' is not an integer");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw UserError("config: " + key + ": '" + value + "' is not an unsigned integer");
    }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(parse_int(key, item));
    if (out.empty()) throw UserError("config: " + key + ": empty list");
    return out;
}

std::string format_int_list(const std::vector<int>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(values[i]);
    }
    return out;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace

std::vector<Modality> parse_modalities(const std::string& token) {
    if (token == "both") return {Modality::visual, Modality::textual};
    if (token == "image") return {Modality::visual};
    if (token == "text") return {Modality::textual};
    if (token == "none") return {};
    throw UserError("config: model.modalities must be both|text|image|none, got '" + token + "'");
}

std::string modalities_token(const std::vector<Modality>& modalities) {
    bool visual = false, textual = false;
    for (Modality m : modalities) (m == Modality::visual ? visual : textual) = true;
    if (visual && textual) return "both";
    if (visual) return "image";
    if (textual) return "text";
    return "none";
}

RunConfig RunConfig::from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
    RunConfig cfg;
    for (const auto& [key, value] : pairs) {
        if (key == "data.interactions") cfg.data_interactions = value;
        else if (key == "data.visual") cfg.data_visual = value;
        else if (key == "data.textual") cfg.data_textual = value;
        else if (key == "data.dir") cfg.data_dir = value;
        else if (key == "run.dir") cfg.run_dir = value;
        else if (key == "synth.dir") cfg.synth_dir = value;
        else if (key == "synth.users") cfg.synth.users = parse_int(key, value);
        else if (key == "synth.items") cfg.synth.items = parse_int(key, value);
        else if (key == "synth.blocks") cfg.synth.blocks = parse_int(key, value);
        else if (key == "synth.within") cfg.synth.within = parse_double(key, value);
        else if (key == "synth.noise") cfg.synth.noise = parse_double(key, value);
        else if (key == "synth.jitter") cfg.synth.jitter = parse_double(key, value);
        else if (key == "synth.visual_dim") cfg.synth.visual_dim = parse_int(key, value);
        else if (key == "synth.textual_dim") cfg.synth.textual_dim = parse_int(key, value);
        else if (key == "synth.seed") cfg.synth.seed = parse_u64(key, value);
        else if (key == "model.embedding_dim") cfg.local.embedding_dim = parse_int(key, value);
        else if (key == "model.id_layers") cfg.local.id_layers = parse_int(key, value);
        else if (key == "model.modality_layer") cfg.local.modality_layer = parse_int(key, value);
        else if (key == "model.modalities") cfg.local.modalities = parse_modalities(value);
        else if (key == "global.hyperedges") cfg.global.hyperedges = parse_int(key, value);
        else if (key == "global.depth") cfg.global.depth = parse_int(key, value);
        else if (key == "global.dropout") cfg.global.dropout_rate = parse_double(key, value);
        else if (key == "global.tau") cfg.global.tau = parse_double(key, value);
        else if (key == "global.alpha") cfg.global.alpha = parse_double(key, value);
        else if (key == "loss.lambda") cfg.weights.lambda_reg = parse_double(key, value);
        else if (key == "loss.omega") cfg.weights.omega = parse_double(key, value);
        else if (key == "loss.beta") cfg.weights.beta = parse_double(key, value);
        else if (key == "loss.delta") cfg.weights.delta = parse_double(key, value);
        else if (key == "train.learning_rate") cfg.learning_rate = parse_double(key, value);
        else if (key == "train.batch_size") cfg.batch_size = parse_int(key, value);
        else if (key == "train.max_epochs") cfg.max_epochs = parse_int(key, value);
        else if (key == "train.patience") cfg.patience = parse_int(key, value);
        else if (key == "train.seed") cfg.seed = parse_u64(key, value);
        else if (key == "eval.ks") cfg.eval_ks = parse_int_list(key, value);
        else throw UserError("config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path,
                               const std::vector<std::pair<std::string, std::string>>& overrides) {
    std::ifstream in(path);
    if (!in) throw UserError("config: cannot open '" + path + "'");
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw UserError("config: " + path + ":" + std::to_string(line_no) + ": expected key=value");
        pairs.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    for (const auto& kv : overrides) pairs.push_back(kv);
    return from_pairs(pairs);
}

std::string RunConfig::dump() const {
    std::string out;
    auto emit = [&](const std::string& key, const std::string& value) {
        out += key;
        out += '=';
        out += value;
        out += '\n';
    };
    emit("data.interactions", data_interactions);
    emit("data.visual", data_visual);
    emit("data.textual", data_textual);
    emit("data.dir", data_dir);
    emit("run.dir", run_dir);
    emit("synth.dir", synth_dir);
    emit("synth.users", std::to_string(synth.users));
    emit("synth.items", std::to_string(synth.items));
    emit("synth.blocks", std::to_string(synth.blocks));
    emit("synth.within", format_double(synth.within));
    emit("synth.noise", format_double(synth.noise));
    emit("synth.jitter", format_double(synth.jitter));
    emit("synth.visual_dim", std::to_string(synth.visual_dim));
    emit("synth.textual_dim", std::to_string(synth.textual_dim));
    emit("synth.seed", std::to_string(synth.seed));
    emit("model.embedding_dim", std::to_string(local.embedding_dim));
    emit("model.id_layers", std::to_string(local.id_layers));
    emit("model.modality_layer", std::to_string(local.modality_layer));
    emit("model.modalities", modalities_token(local.modalities));
    emit("global.hyperedges", std::to_string(global.hyperedges));
    emit("global.depth", std::to_string(global.depth));
    emit("global.dropout", format_double(global.dropout_rate));
    emit("global.tau", format_double(global.tau));
    emit("global.alpha", format_double(global.alpha));
    emit("loss.lambda", format_double(weights.lambda_reg));
    emit("loss.omega", format_double(weights.omega));
    emit("loss.beta", format_double(weights.beta));
    emit("loss.delta", format_double(weights.delta));
    emit("train.learning_rate", format_double(learning_rate));
    emit("train.batch_size", std::to_string(batch_size));
    emit("train.max_epochs", std::to_string(max_epochs));
    emit("train.patience", std::to_string(patience));
    emit("train.seed", std::to_string(seed));
    emit("eval.ks", format_int_list(eval_ks));
    return out;
}

std::uint64_t RunConfig::fingerprint() const {
    const std::string all = dump();
    std::istringstream in(all);
    std::string line;
    std::uint64_t h = 0xCBF29CE484222325ULL;
    while (std::getline(in, line)) {
        if (line.rfind("model.", 0) == 0 || line.rfind("global.", 0) == 0 ||
            line.rfind("loss.", 0) == 0 || line.rfind("train.", 0) == 0) {
            h = fnv1a(line.data(), line.size(), h);
            h = fnv1a("\n", 1, h);
        }
    }
    return h;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig cfg;
    cfg.learning_rate = learning_rate;
    cfg.batch_size = batch_size;
    cfg.max_epochs = max_epochs;
    cfg.patience = patience;
    cfg.seed = seed;
    cfg.weights = weights;
    cfg.local = local;
    cfg.global = global;
    return cfg;
}

void RunConfig::validate() const {
    synth.validate();
    train_config().validate();
    if (eval_ks.empty()) throw UserError("config: eval.ks must list at least one K");
    for (std::size_t i = 0; i < eval_ks.size(); ++i) {
        if (eval_ks[i] < 1) throw UserError("config: eval.ks entries must be >= 1");
        if (i > 0 && eval_ks[i] <= eval_ks[i - 1])
            throw UserError("config: eval.ks must be strictly increasing");
    }
}

}  // namespace mgnm
