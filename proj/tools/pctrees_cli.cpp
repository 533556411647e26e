#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "pctrees.h"

namespace {

struct Args {
    std::string config_path;
    // key=value overrides in command-line order, applied after the config file
    std::vector<std::pair<std::string, std::string>> pairs;
};

void add_key(CLI::App* sub, Args& args, const std::string& flag, const std::string& key,
             const std::string& desc) {
    sub->add_option_function<std::string>(
        flag, [&args, key](const std::string& v) { args.pairs.emplace_back(key, v); }, desc);
}

void add_switch(CLI::App* sub, Args& args, const std::string& flag, const std::string& key,
                const std::string& desc) {
    sub->add_flag_callback(
        flag, [&args, key] { args.pairs.emplace_back(key, "true"); }, desc);
}

void add_common(CLI::App* sub, Args& args) {
    sub->add_option("--config", args.config_path, "key=value config file, '#' comments");
    add_key(sub, args, "--seed", "seed", "root random seed (default 0)");
    add_key(sub, args, "--out", "out", "output directory");
}

void add_matching(CLI::App* sub, Args& args) {
    add_key(sub, args, "--census", "census", "census CSV (tag,species,offsets,dbh,alive)");
    add_key(sub, args, "--cell-size", "cell_size", "matching cell size in meters (default 1)");
    add_key(sub, args, "--post-x", "post_x", "plot corner post easting (default 0)");
    add_key(sub, args, "--post-y", "post_y", "plot corner post northing (default 0)");
    add_switch(sub, args, "--include-dead", "include_dead", "keep dead census records");
    add_key(sub, args, "--top-k", "top_k", "species kept before grouping into 'other'");
}

void add_filter(CLI::App* sub, Args& args) {
    add_key(sub, args, "--min-points", "min_points",
            "keep clouds with strictly more points (default 1000)");
    add_key(sub, args, "--filter-stage", "filter_stage",
            "apply the point filter pre or post matching (default post)");
}

void add_raster(CLI::App* sub, Args& args) {
    add_key(sub, args, "--res", "res", "raster resolution (default 128)");
    add_key(sub, args, "--extent", "extent", "raster window extent in scene units (default 2)");
    add_key(sub, args, "--mode", "mode", "density|occupancy (default density)");
    add_key(sub, args, "--rescale", "rescale", "unit|global normalization");
}

int fail_status(pct_status st) {
    std::fprintf(stderr, "%s: %s\n", pct_status_name(st), pct_last_error());
    return static_cast<int>(st);
}

int apply_config(pct_config* cfg, const Args& args) {
    if (!args.config_path.empty()) {
        pct_status st = pct_config_load_file(cfg, args.config_path.c_str());
        if (st != PCT_OK) return fail_status(st);
    }
    for (const auto& [key, value] : args.pairs) {
        pct_status st = pct_config_set(cfg, key.c_str(), value.c_str());
        if (st != PCT_OK) return fail_status(st);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tree species classification from segmented LiDAR point clouds"};
    app.require_subcommand(1);
    Args args;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
    add_common(synth, args);
    add_key(synth, args, "--per-class", "per_class", "clouds per archetype (default 100)");
    add_key(synth, args, "--n-points", "n_points",
            "points per cloud; 0 draws 800-3000 (default 0)");

    CLI::App* match = app.add_subcommand("match", "match clouds to census records by location");
    add_common(match, args);
    add_key(match, args, "--manifest", "manifest", "cloud manifest CSV");
    add_matching(match, args);
    add_filter(match, args);

    CLI::App* project = app.add_subcommand("project", "write six-view rasters and previews");
    add_common(project, args);
    add_key(project, args, "--manifest", "manifest", "cloud manifest CSV");
    add_filter(project, args);
    add_raster(project, args);
    add_key(project, args, "--previews", "previews", "write PGM previews, true|false");

    CLI::App* train = app.add_subcommand("train", "train a classifier on matched clouds");
    add_common(train, args);
    add_key(train, args, "--manifest", "manifest", "cloud manifest CSV");
    add_matching(train, args);
    add_filter(train, args);
    add_raster(train, args);
    add_key(train, args, "--model", "model", "baseline|baselinepp|pctrees (default pctrees)");
    add_switch(train, args, "--tiny", "tiny", "reduced architecture preset");
    add_key(train, args, "--epochs", "epochs", "training epochs (default 100)");
    add_key(train, args, "--batch-size", "batch_size", "mini-batch size (default 32)");
    add_key(train, args, "--lr", "lr", "learning rate (default 1e-5)");
    add_key(train, args, "--split-fraction", "split_fraction",
            "per-class train fraction (default 0.8)");
    add_key(train, args, "--resample", "resample", "none|up|down (default none)");
    add_key(train, args, "--optimizer", "optimizer", "adam|sgd (default adam)");
    add_key(train, args, "--input-points", "input_points",
            "points per cloud for the point model; 0 = preset");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on matched clouds");
    add_common(eval, args);
    add_key(eval, args, "--manifest", "manifest", "cloud manifest CSV");
    add_key(eval, args, "--checkpoint", "checkpoint", "model checkpoint (.pctw)");
    add_matching(eval, args);
    add_filter(eval, args);
    add_key(eval, args, "--batch-size", "batch_size", "mini-batch size (default 32)");

    CLI::App* predict = app.add_subcommand("predict", "classify unlabeled clouds");
    add_common(predict, args);
    add_key(predict, args, "--manifest", "manifest", "cloud manifest CSV");
    add_key(predict, args, "--checkpoint", "checkpoint", "model checkpoint (.pctw)");
    add_key(predict, args, "--min-points", "min_points",
            "keep clouds with strictly more points (default 1000)");
    add_key(predict, args, "--batch-size", "batch_size", "mini-batch size (default 32)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::fprintf(stderr, "Config: %s\n", e.what());
        return 4;
    }

    pct_config* cfg = pct_config_new();
    int rc = apply_config(cfg, args);
    if (rc != 0) {
        pct_config_free(cfg);
        return rc;
    }

    pct_status st = PCT_OK;
    if (synth->parsed()) {
        st = pct_run_synth(cfg);
        if (st == PCT_OK) std::printf("wrote dataset to %s\n", pct_config_get(cfg, "out"));
    } else if (match->parsed()) {
        pct_match_stats stats{};
        st = pct_run_match(cfg, &stats);
        if (st == PCT_OK) {
            std::printf("pairs=%llu\n", static_cast<unsigned long long>(stats.pairs));
            std::printf("ambiguous_cells=%llu\n",
                        static_cast<unsigned long long>(stats.ambiguous_cells));
            std::printf("unmatched_clouds=%llu\n",
                        static_cast<unsigned long long>(stats.unmatched_clouds));
            std::printf("unmatched_records=%llu\n",
                        static_cast<unsigned long long>(stats.unmatched_records));
            std::printf("match_rate=%g\n", stats.match_rate);
        }
    } else if (project->parsed()) {
        st = pct_run_project(cfg);
        if (st == PCT_OK) std::printf("wrote rasters to %s\n", pct_config_get(cfg, "out"));
    } else if (train->parsed()) {
        st = pct_run_train(cfg);
        if (st == PCT_OK)
            std::printf("wrote checkpoint and metrics to %s\n", pct_config_get(cfg, "out"));
    } else if (eval->parsed()) {
        char* report = nullptr;
        st = pct_run_eval(cfg, &report);
        if (st == PCT_OK && report) {
            std::fputs(report, stdout);
            pct_string_free(report);
        }
    } else if (predict->parsed()) {
        st = pct_run_predict(cfg);
        if (st == PCT_OK) std::printf("wrote predictions to %s\n", pct_config_get(cfg, "out"));
    }
    pct_config_free(cfg);
    return st == PCT_OK ? 0 : fail_status(st);
}
