#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mgnm/config.hpp"
#include "mgnm/eval.hpp"
#include "mgnm/trainer.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<std::pair<std::string, std::string>> split_overrides(const std::vector<std::string>& sets) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const std::string& s : sets) {
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw mgnm::UserError("cli: --set expects key=value, got '" + s + "'");
        out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return out;
}

mgnm::RunConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
    auto overrides = split_overrides(sets);
    if (const char* env_seed = std::getenv("MGNM_SEED")) overrides.emplace_back("train.seed", env_seed);
    if (path.empty()) {
        mgnm::RunConfig cfg = mgnm::RunConfig::from_pairs(overrides);
        return cfg;
    }
    return mgnm::RunConfig::from_file(path, overrides);
}

std::map<mgnm::Modality, std::string> feature_paths(const mgnm::RunConfig& cfg) {
    std::map<mgnm::Modality, std::string> paths;
    if (!cfg.data_visual.empty()) paths[mgnm::Modality::visual] = cfg.data_visual;
    if (!cfg.data_textual.empty()) paths[mgnm::Modality::textual] = cfg.data_textual;
    return paths;
}

void write_reports(const std::string& dir, const std::string& stem, const mgnm::MetricsReport& report) {
    mgnm::atomic_write((fs::path(dir) / (stem + ".txt")).string(), mgnm::format_report_table(report));
    mgnm::atomic_write((fs::path(dir) / (stem + ".kv")).string(), mgnm::format_report_kv(report));
}

int cmd_synth(const mgnm::RunConfig& cfg) {
    const mgnm::SynthStats stats = mgnm::synth_dataset(cfg.synth, cfg.synth_dir);
    std::printf("synth: wrote %d interactions for %d users / %d items to %s\n", stats.interactions,
                cfg.synth.users, cfg.synth.items, cfg.synth_dir.c_str());
    if (stats.resampled_users > 0)
        std::printf("synth: resampled %d sparse users\n", stats.resampled_users);
    return 0;
}

int cmd_prepare(const mgnm::RunConfig& cfg) {
    const mgnm::PrepareStats stats =
        mgnm::prepare_dataset(cfg.data_interactions, feature_paths(cfg), cfg.seed, cfg.data_dir);
    std::printf("prepare: kept %d users / %d items (excluded %d users with < 3 interactions)\n",
                stats.kept_users, stats.kept_items, stats.excluded_users);
    if (stats.dropped_eval_pairs > 0)
        std::printf("prepare: dropped %d val/test pairs whose item never occurs in training\n",
                    stats.dropped_eval_pairs);
    std::printf("prepare: dataset written to %s\n", cfg.data_dir.c_str());
    return 0;
}

int cmd_train(const mgnm::RunConfig& cfg) {
    const mgnm::Dataset dataset = mgnm::load_prepared(cfg.data_dir, cfg.local.modalities);
    const mgnm::TrainConfig train_cfg = cfg.train_config();
    const mgnm::FitResult result = mgnm::fit(dataset, train_cfg);

    fs::create_directories(cfg.run_dir);
    std::string log_text = "epoch\tbpr\thcl_user\thcl_item\tddr\tddr_mm\ttotal\tval_recall20\n";
    for (const auto& rec : result.log) {
        char line[256];
        std::snprintf(line, sizeof(line), "%d\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n",
                      rec.epoch, rec.bpr, rec.hcl_user, rec.hcl_item, rec.ddr, rec.ddr_mm, rec.total,
                      rec.validation_recall20);
        log_text += line;
    }
    mgnm::atomic_write((fs::path(cfg.run_dir) / "training_log.tsv").string(), log_text);

    mgnm::checkpoint_save((fs::path(cfg.run_dir) / "checkpoint.bin").string(), result.best_params,
                          result.optimizer, cfg.fingerprint());

    const mgnm::InteractionGraph graph =
        mgnm::build_graph(dataset.train, dataset.user_count, dataset.item_count);
    const mgnm::Tensor e_star = mgnm::eval_embeddings(graph, dataset.features, result.best_params,
                                                      cfg.local, cfg.global);
    const mgnm::MetricsReport val_report =
        mgnm::evaluate(e_star, dataset.user_count, dataset.item_count, dataset.validation,
                       dataset.train, cfg.eval_ks, cfg.fingerprint());
    std::vector<mgnm::Interaction> test_mask = dataset.train;
    test_mask.insert(test_mask.end(), dataset.validation.begin(), dataset.validation.end());
    const mgnm::MetricsReport test_report =
        mgnm::evaluate(e_star, dataset.user_count, dataset.item_count, dataset.test, test_mask,
                       cfg.eval_ks, cfg.fingerprint());
    write_reports(cfg.run_dir, "metrics_validation", val_report);
    write_reports(cfg.run_dir, "metrics_test", test_report);

    std::printf("train: stopped after %zu epochs; best epoch %d (validation Recall@20 = %.6f)\n",
                result.log.size(), result.best_epoch, result.best_validation_recall20);
    std::printf("validation metrics:\n%s", mgnm::format_report_table(val_report).c_str());
    std::printf("test metrics:\n%s", mgnm::format_report_table(test_report).c_str());
    return 0;
}

int cmd_evaluate(const mgnm::RunConfig& cfg) {
    const mgnm::Dataset dataset = mgnm::load_prepared(cfg.data_dir, cfg.local.modalities);
    mgnm::ParameterSet params;
    mgnm::OptimizerState state;
    mgnm::checkpoint_load((fs::path(cfg.run_dir) / "checkpoint.bin").string(), cfg.fingerprint(),
                          params, state);

    const mgnm::InteractionGraph graph =
        mgnm::build_graph(dataset.train, dataset.user_count, dataset.item_count);
    mgnm::check_parameter_shapes(
        params, mgnm::model_dims(graph, dataset.features, cfg.local, cfg.global));
    const mgnm::Tensor e_star =
        mgnm::eval_embeddings(graph, dataset.features, params, cfg.local, cfg.global);
    const mgnm::MetricsReport val_report =
        mgnm::evaluate(e_star, dataset.user_count, dataset.item_count, dataset.validation,
                       dataset.train, cfg.eval_ks, cfg.fingerprint());
    std::vector<mgnm::Interaction> test_mask = dataset.train;
    test_mask.insert(test_mask.end(), dataset.validation.begin(), dataset.validation.end());
    const mgnm::MetricsReport test_report =
        mgnm::evaluate(e_star, dataset.user_count, dataset.item_count, dataset.test, test_mask,
                       cfg.eval_ks, cfg.fingerprint());
    write_reports(cfg.run_dir, "metrics_validation", val_report);
    write_reports(cfg.run_dir, "metrics_test", test_report);

    std::printf("validation metrics:\n%s", mgnm::format_report_table(val_report).c_str());
    std::printf("test metrics:\n%s", mgnm::format_report_table(test_report).c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MGNM multimodal graph recommender"};
    app.require_subcommand(1);
    app.fallthrough();  // --config/--set may follow the subcommand

    std::string config_path;
    std::vector<std::string> sets;
    app.add_option("--config", config_path, "Path to a key=value config file");
    app.add_option("--set", sets, "Override a config key, e.g. --set train.seed=7");

    auto* synth = app.add_subcommand("synth", "Generate a planted-block synthetic dataset");
    auto* prepare = app.add_subcommand("prepare", "Split and remap a raw dataset");
    auto* train = app.add_subcommand("train", "Train and checkpoint a model");
    auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on validation and test");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const mgnm::RunConfig cfg = load_config(config_path, sets);
        if (synth->parsed()) return cmd_synth(cfg);
        if (prepare->parsed()) return cmd_prepare(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (evaluate->parsed()) return cmd_evaluate(cfg);
        std::fprintf(stderr, "mgnm: no command given\n");
        return 1;
    } catch (const mgnm::UserError& e) {
        std::fprintf(stderr, "mgnm: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "mgnm: internal error: %s\n", e.what());
        return 2;
    }
}
