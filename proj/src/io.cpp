#include "mgnm/io.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mgnm/rng.hpp"

namespace fs = std::filesystem;

namespace mgnm {

namespace {

void append_u32_le(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

std::uint32_t read_u32_le(const std::string& bytes, std::size_t off) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + b])) << (8 * b);
    return v;
}

void append_f32_le(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    append_u32_le(out, bits);
}

float read_f32_le(const std::string& bytes, std::size_t off) {
    const std::uint32_t bits = read_u32_le(bytes, off);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

constexpr char kFeatureMagic[] = "MMFT0001";

}  // namespace

namespace {

std::vector<Interaction> load_interactions_impl(const std::string& path, bool allow_empty) {
    std::ifstream in(path);
    if (!in) throw UserError("io: cannot open '" + path + "'");
    std::vector<Interaction> triples;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw UserError("io: " + path + ":" + std::to_string(line_no) + ": expected user<TAB>item");
        long u = 0, i = 0;
        std::size_t used = 0;
        try {
            u = std::stol(line.substr(0, tab), &used);
            if (used != tab) throw std::invalid_argument("trailing");
            const std::string rest = line.substr(tab + 1);
            i = std::stol(rest, &used);
            if (used != rest.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw UserError("io: " + path + ":" + std::to_string(line_no) + ": non-integer field");
        }
        if (u < 0 || i < 0)
            throw UserError("io: " + path + ":" + std::to_string(line_no) + ": negative id");
        triples.emplace_back(static_cast<int>(u), static_cast<int>(i));
    }
    if (triples.empty() && !allow_empty)
        throw UserError("io: '" + path + "' contains no interactions");
    return triples;
}

}  // namespace

std::vector<Interaction> load_interactions(const std::string& path) {
    return load_interactions_impl(path, false);
}

void save_interactions(const std::string& path, const std::vector<Interaction>& triples) {
    std::string out;
    out.reserve(triples.size() * 12);
    for (const auto& [u, i] : triples) {
        out += std::to_string(u);
        out += '\t';
        out += std::to_string(i);
        out += '\n';
    }
    atomic_write(path, out);
}

Tensor load_features(const std::string& path, int expected_items) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 16 || bytes.compare(0, 8, kFeatureMagic) != 0)
        throw UserError("io: '" + path + "' is not a feature file (bad magic)");
    const std::uint32_t rows = read_u32_le(bytes, 8);
    const std::uint32_t dim = read_u32_le(bytes, 12);
    if (expected_items >= 0 && rows != static_cast<std::uint32_t>(expected_items))
        throw UserError("io: '" + path + "' has " + std::to_string(rows) + " rows, expected " +
                        std::to_string(expected_items));
    const std::size_t expected_bytes = 16 + static_cast<std::size_t>(rows) * dim * 4;
    if (bytes.size() < expected_bytes)
        throw UserError("io: '" + path + "' truncated: " + std::to_string(bytes.size()) + " of " +
                        std::to_string(expected_bytes) + " bytes");
    if (bytes.size() > expected_bytes)
        throw UserError("io: '" + path + "' has trailing bytes past the payload");
    Tensor out(static_cast<int>(rows), static_cast<int>(dim));
    for (std::size_t k = 0; k < static_cast<std::size_t>(rows) * dim; ++k)
        out.at(k) = static_cast<double>(read_f32_le(bytes, 16 + 4 * k));
    return out;
}

void save_features(const std::string& path, const Tensor& features) {
    std::string out;
    out.reserve(16 + features.size() * 4);
    out.append(kFeatureMagic, 8);
    append_u32_le(out, static_cast<std::uint32_t>(features.rows()));
    append_u32_le(out, static_cast<std::uint32_t>(features.cols()));
    for (std::size_t k = 0; k < features.size(); ++k)
        append_f32_le(out, static_cast<float>(features.at(k)));
    atomic_write(path, out);
}

void atomic_write(const std::string& path, const std::string& bytes) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw UserError("io: cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw UserError("io: short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UserError("io: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<Interaction> Dataset::all_interactions() const {
    std::vector<Interaction> all = train;
    all.insert(all.end(), validation.begin(), validation.end());
    all.insert(all.end(), test.begin(), test.end());
    std::sort(all.begin(), all.end());
    return all;
}

namespace {

std::map<std::string, std::string> parse_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UserError("io: cannot open '" + path + "'");
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

}  // namespace

Dataset load_prepared(const std::string& dir, const std::vector<Modality>& wanted) {
    const fs::path base(dir);
    const auto manifest = parse_manifest((base / "manifest.txt").string());
    Dataset ds;
    try {
        ds.user_count = std::stoi(manifest.at("users"));
        ds.item_count = std::stoi(manifest.at("items"));
    } catch (const std::exception&) {
        throw UserError("io: manifest in '" + dir + "' is missing users/items counts");
    }
    ds.train = load_interactions((base / "train.tsv").string());
    // Tiny datasets can end up with every val/test pair dropped.
    ds.validation = load_interactions_impl((base / "valid.tsv").string(), true);
    ds.test = load_interactions_impl((base / "test.tsv").string(), true);
    for (const auto& [u, i] : ds.all_interactions())
        if (u >= ds.user_count || i >= ds.item_count)
            throw UserError("io: interaction (" + std::to_string(u) + "," + std::to_string(i) +
                            ") exceeds manifest counts in '" + dir + "'");
    for (Modality m : wanted) {
        const fs::path file = base / (std::string(to_string(m)) + ".feat");
        ds.features.features[m] = load_features(file.string(), ds.item_count);
    }
    return ds;
}

PrepareStats prepare_dataset(const std::string& interactions_path,
                             const std::map<Modality, std::string>& feature_paths, std::uint64_t seed,
                             const std::string& out_dir) {
    const std::vector<Interaction> raw = load_interactions(interactions_path);

    PrepareStats stats;
    std::map<int, std::set<int>> by_user;
    int max_raw_item = -1;
    for (const auto& [u, i] : raw) {
        by_user[u].insert(i);
        max_raw_item = std::max(max_raw_item, i);
    }
    stats.raw_users = static_cast<int>(by_user.size());

    // Dense user ids over users with enough history for a 1/1/1 split.
    std::map<int, int> user_map;
    for (const auto& [u, items] : by_user) {
        if (static_cast<int>(items.size()) < 3) {
            ++stats.excluded_users;
            continue;
        }
        const int dense = static_cast<int>(user_map.size());
        user_map[u] = dense;
    }
    if (user_map.empty()) throw UserError("prepare: no user has the 3 interactions a split needs");

    std::set<int> raw_items_used;
    std::vector<Interaction> retained;
    for (const auto& [u, items] : by_user) {
        auto it = user_map.find(u);
        if (it == user_map.end()) continue;
        for (int i : items) {
            retained.emplace_back(it->second, i);
            raw_items_used.insert(i);
        }
    }
    stats.raw_items = static_cast<int>(raw_items_used.size());

    SplitResult split = split_interactions(retained, seed);

    // Items must occur in training for their embeddings to receive any
    // signal; remap to the train-covered item set and drop eval pairs that
    // point outside it.
    std::set<int> train_items;
    for (const auto& [u, i] : split.train) train_items.insert(i);
    std::map<int, int> item_map;
    for (int i : train_items) {
        const int dense = static_cast<int>(item_map.size());
        item_map[i] = dense;
    }

    auto remap_items = [&](std::vector<Interaction>& pairs, bool drop_unmapped) {
        std::vector<Interaction> out;
        out.reserve(pairs.size());
        for (const auto& [u, i] : pairs) {
            auto it = item_map.find(i);
            if (it == item_map.end()) {
                if (!drop_unmapped) throw Error("prepare: train item lost its id");
                ++stats.dropped_eval_pairs;
                continue;
            }
            out.emplace_back(u, it->second);
        }
        pairs = std::move(out);
    };
    remap_items(split.train, false);
    remap_items(split.validation, true);
    remap_items(split.test, true);

    stats.kept_users = static_cast<int>(user_map.size());
    stats.kept_items = static_cast<int>(item_map.size());

    const fs::path base(out_dir);
    fs::create_directories(base);
    save_interactions((base / "train.tsv").string(), split.train);
    save_interactions((base / "valid.tsv").string(), split.validation);
    save_interactions((base / "test.tsv").string(), split.test);

    for (const auto& [m, path] : feature_paths) {
        if (path.empty()) continue;
        // The feature bank may cover a larger catalog than the interactions
        // reference; it only has to reach the highest raw id.
        const Tensor raw_feats = load_features(path, -1);
        if (raw_feats.rows() <= max_raw_item)
            throw UserError("prepare: '" + path + "' has " + std::to_string(raw_feats.rows()) +
                            " rows but item id " + std::to_string(max_raw_item) + " is referenced");
        Tensor remapped(stats.kept_items, raw_feats.cols());
        for (const auto& [orig, dense] : item_map)
            for (int c = 0; c < raw_feats.cols(); ++c) remapped(dense, c) = raw_feats(orig, c);
        save_features((base / (std::string(to_string(m)) + ".feat")).string(), remapped);
    }

    std::string user_lines, item_lines;
    for (const auto& [orig, dense] : user_map)
        user_lines += std::to_string(orig) + "\t" + std::to_string(dense) + "\n";
    for (const auto& [orig, dense] : item_map)
        item_lines += std::to_string(orig) + "\t" + std::to_string(dense) + "\n";
    atomic_write((base / "user_map.tsv").string(), user_lines);
    atomic_write((base / "item_map.tsv").string(), item_lines);

    std::string manifest;
    manifest += "users=" + std::to_string(stats.kept_users) + "\n";
    manifest += "items=" + std::to_string(stats.kept_items) + "\n";
    manifest += "train=" + std::to_string(split.train.size()) + "\n";
    manifest += "validation=" + std::to_string(split.validation.size()) + "\n";
    manifest += "test=" + std::to_string(split.test.size()) + "\n";
    manifest += "excluded_users=" + std::to_string(stats.excluded_users) + "\n";
    manifest += "dropped_eval_pairs=" + std::to_string(stats.dropped_eval_pairs) + "\n";
    manifest += "split_seed=" + std::to_string(seed) + "\n";
    atomic_write((base / "manifest.txt").string(), manifest);
    return stats;
}

void SynthConfig::validate() const {
    if (users < 1 || items < 1) throw UserError("synth: users and items must be >= 1");
    if (blocks < 1) throw UserError("synth: blocks must be >= 1");
    if (blocks > users || blocks > items) throw UserError("synth: more blocks than users or items");
    if (noise < 0.0 || noise >= 1.0) throw UserError("synth: noise must be in [0,1)");
    if (within <= 0.0 || within > 1.0) throw UserError("synth: within must be in (0,1]");
    if (jitter < 0.0) throw UserError("synth: jitter must be >= 0");
    if (visual_dim < 1 || textual_dim < 1) throw UserError("synth: feature dims must be >= 1");
}

SynthStats synth_dataset(const SynthConfig& config, const std::string& out_dir) {
    config.validate();
    SynthStats stats;
    Rng rng(config.seed);

    std::vector<Interaction> triples;
    for (int u = 0; u < config.users; ++u) {
        const int ub = u % config.blocks;
        // Redraw a user whose row came out too sparse for the 8:1:1 split.
        for (int attempt = 0;; ++attempt) {
            std::vector<int> items;
            for (int i = 0; i < config.items; ++i) {
                const double pr = (i % config.blocks == ub) ? config.within : config.noise;
                if (rng.next_double() < pr) items.push_back(i);
            }
            if (static_cast<int>(items.size()) >= 3) {
                for (int i : items) triples.emplace_back(u, i);
                break;
            }
            ++stats.resampled_users;
            if (attempt > 1000)
                throw UserError("synth: user " + std::to_string(u) +
                                " cannot reach 3 interactions; raise 'within'");
        }
    }
    stats.interactions = static_cast<int>(triples.size());

    auto make_features = [&](int dim) {
        std::vector<std::vector<double>> centroids(config.blocks, std::vector<double>(dim));
        for (auto& c : centroids)
            for (double& v : c) v = rng.next_gaussian();
        Tensor feats(config.items, dim);
        for (int i = 0; i < config.items; ++i) {
            const auto& c = centroids[i % config.blocks];
            for (int col = 0; col < dim; ++col)
                feats(i, col) = c[col] + config.jitter * rng.next_gaussian();
        }
        return feats;
    };

    const fs::path base(out_dir);
    fs::create_directories(base);
    save_interactions((base / "interactions.tsv").string(), triples);
    save_features((base / "visual.feat").string(), make_features(config.visual_dim));
    save_features((base / "textual.feat").string(), make_features(config.textual_dim));

    std::string manifest;
    manifest += "users=" + std::to_string(config.users) + "\n";
    manifest += "items=" + std::to_string(config.items) + "\n";
    manifest += "blocks=" + std::to_string(config.blocks) + "\n";
    manifest += "within=" + std::to_string(config.within) + "\n";
    manifest += "noise=" + std::to_string(config.noise) + "\n";
    manifest += "jitter=" + std::to_string(config.jitter) + "\n";
    manifest += "visual_dim=" + std::to_string(config.visual_dim) + "\n";
    manifest += "textual_dim=" + std::to_string(config.textual_dim) + "\n";
    manifest += "seed=" + std::to_string(config.seed) + "\n";
    manifest += "interactions=" + std::to_string(stats.interactions) + "\n";
    manifest += "resampled_users=" + std::to_string(stats.resampled_users) + "\n";
    atomic_write((base / "synth.manifest").string(), manifest);
    return stats;
}

}  // namespace mgnm
