#include "pctrees.h"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pctrees/error.hpp"
#include "pctrees/georef.hpp"
#include "pctrees/io.hpp"
#include "pctrees/models.hpp"
#include "pctrees/pointcloud.hpp"
#include "pctrees/raster.hpp"
#include "pctrees/rng.hpp"
#include "pctrees/synth.hpp"
#include "pctrees/tensor.hpp"
#include "pctrees/train.hpp"

using namespace pctrees;

namespace {

thread_local std::string g_last_error;

pct_status fail(ErrorCategory c, const std::string& msg) {
    g_last_error = msg;
    return static_cast<pct_status>(static_cast<int>(c));
}

template <typename F>
pct_status guarded(F&& f) {
    try {
        f();
        g_last_error.clear();
        return PCT_OK;
    } catch (const Error& e) {
        return fail(e.category(), e.what());
    } catch (const std::exception& e) {
        return fail(ErrorCategory::IO, e.what());
    }
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "seed",        "out",          "manifest",  "census",      "checkpoint",
        "model",       "tiny",         "epochs",    "batch_size",  "lr",
        "split_fraction", "resample",  "optimizer", "min_points",  "filter_stage",
        "res",         "extent",       "mode",      "cell_size",   "include_dead",
        "top_k",       "post_x",       "post_y",    "per_class",   "n_points",
        "rescale",     "previews",     "input_points",
    };
    return keys;
}

}  // namespace

struct pct_config {
    std::map<std::string, std::string> values;
};

struct pct_cloud {
    PointCloud cloud;
};

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Typed access with defaults; every parse failure is a Config error naming
// the key.
struct Resolved {
    explicit Resolved(const pct_config* c) : cfg(c) {}

    const pct_config* cfg;
    // Keys the command actually consumed, with their resolved values; dumped
    // to run_manifest.txt so a run is reproducible from its output directory.
    mutable std::map<std::string, std::string> used;

    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = cfg->values.find(key);
        std::string v = it == cfg->values.end() ? fallback : it->second;
        used[key] = v;
        return v;
    }
    std::string require(const std::string& key) const {
        auto it = cfg->values.find(key);
        if (it == cfg->values.end()) throw_config("missing required key '" + key + "'");
        used[key] = it->second;
        return it->second;
    }
    int64_t get_int(const std::string& key, int64_t fallback) const {
        std::string v = get(key, std::to_string(fallback));
        int64_t out = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size())
            throw_config("key '" + key + "': expected an integer, got '" + v + "'");
        return out;
    }
    uint64_t get_u64(const std::string& key, uint64_t fallback) const {
        std::string v = get(key, std::to_string(fallback));
        uint64_t out = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size())
            throw_config("key '" + key + "': expected a non-negative integer, got '" + v + "'");
        return out;
    }
    double get_double(const std::string& key, double fallback) const {
        std::string v = get(key, io::format_double(fallback));
        try {
            size_t pos = 0;
            double out = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw_config("key '" + key + "': expected a number, got '" + v + "'");
        }
    }
    bool get_bool(const std::string& key, bool fallback) const {
        std::string v = get(key, fallback ? "true" : "false");
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw_config("key '" + key + "': expected true/false, got '" + v + "'");
    }
};

std::filesystem::path prepare_out_dir(const Resolved& r) {
    std::filesystem::path out(r.require("out"));
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec) throw_io("cannot create output directory '" + out.string() + "': " + ec.message());
    return out;
}

void write_run_manifest(const Resolved& r, const std::filesystem::path& out_dir,
                        const std::string& command) {
    std::string text = "command=" + command + "\n";
    for (const auto& [k, v] : r.used) text += k + "=" + v + "\n";
    io::write_text((out_dir / "run_manifest.txt").string(), text);
}

raster::Mode parse_mode(const std::string& mode) {
    if (mode == "density") return raster::Mode::Density;
    if (mode == "occupancy") return raster::Mode::Occupancy;
    throw_config("mode must be density or occupancy, got '" + mode + "'");
}

// Shared front half of train/eval: manifest + census -> matched, labeled
// clouds. A fixed dictionary (from a checkpoint) wins over re-grouping.
train::LabeledDataset build_labeled_dataset(const Resolved& r,
                                            const georef::ClassDictionary* fixed_dict) {
    std::vector<PointCloud> clouds = io::load_clouds(r.require("manifest"));
    size_t min_points = r.get_u64("min_points", 1000);
    std::string stage = r.get("filter_stage", "post");
    if (stage != "pre" && stage != "post")
        throw_config("filter_stage must be pre or post, got '" + stage + "'");
    if (stage == "pre") clouds = filter_min_points(std::move(clouds), min_points);

    georef::PlotFrame frame{r.get_double("post_x", 0.0), r.get_double("post_y", 0.0)};
    auto census = io::read_census(r.require("census"));
    auto records = georef::locate_records(census, frame, r.get_bool("include_dead", false));
    auto match = georef::match_by_rounding(clouds, records, r.get_double("cell_size", 1.0));

    std::map<std::string, std::string> species_of_tag;
    for (const auto& rec : records) species_of_tag[rec.tag] = rec.species;
    std::map<std::string, const PointCloud*> cloud_of_id;
    for (const auto& c : clouds) cloud_of_id[c.id] = &c;

    train::LabeledDataset ds;
    if (fixed_dict) {
        ds.dictionary = *fixed_dict;
    } else {
        std::vector<std::string> matched_species;
        for (const auto& [cloud_id, tag] : match.pairs)
            matched_species.push_back(species_of_tag.at(tag));
        ds.dictionary =
            georef::group_species(matched_species, static_cast<size_t>(r.get_int("top_k", 5)));
    }
    for (const auto& [cloud_id, tag] : match.pairs) {
        const PointCloud& c = *cloud_of_id.at(cloud_id);
        if (stage == "post" && c.size() <= min_points) continue;
        ds.items.push_back({cloud_id, c, ds.dictionary.index_of(species_of_tag.at(tag))});
    }
    if (ds.items.empty()) throw_shape("no labeled clouds survive matching and filtering");
    return ds;
}

train::TrainConfig train_config_from(const Resolved& r) {
    train::TrainConfig tc;
    tc.model = r.get("model", "pctrees");
    tc.tiny = r.get_bool("tiny", false);
    tc.epochs = static_cast<int>(r.get_int("epochs", 100));
    tc.batch_size = r.get_u64("batch_size", 32);
    tc.lr = r.get_double("lr", 1e-5);
    tc.seed = r.get_u64("seed", 0);
    tc.split_fraction = r.get_double("split_fraction", 0.8);
    tc.optimizer = r.get("optimizer", "adam");
    tc.res = static_cast<int>(r.get_int("res", 128));
    tc.extent = r.get_double("extent", 2.0);
    tc.mode = parse_mode(r.get("mode", "density"));
    tc.rescale = r.get("rescale", "");
    if (tc.rescale.empty()) tc.rescale = train::default_rescale(tc.model);
    r.used["rescale"] = tc.rescale;
    tc.input_points = static_cast<int>(r.get_int("input_points", 0));
    return tc;
}

models::ModelMeta meta_from(const train::TrainConfig& tc, const train::Model& model,
                            const std::vector<std::string>& class_names) {
    models::ModelMeta meta;
    meta.arch = tc.model;
    meta.tiny = tc.tiny;
    meta.num_classes = static_cast<int>(class_names.size());
    meta.class_names = class_names;
    meta.res = tc.res;
    meta.extent = tc.extent;
    meta.mode = tc.mode == raster::Mode::Density ? "density" : "occupancy";
    meta.rescale = tc.rescale;
    meta.input_points = model.is_point_model ? model.pct.input_points : 0;
    meta.seed = tc.seed;
    return meta;
}

// Rebuild the training-time preprocessing and architecture from a meta file.
train::TrainConfig train_config_from_meta(const models::ModelMeta& meta, const Resolved& r) {
    train::TrainConfig tc;
    tc.model = meta.arch;
    tc.tiny = meta.tiny;
    tc.seed = r.get_u64("seed", meta.seed);
    tc.res = meta.res;
    tc.extent = meta.extent;
    tc.mode = parse_mode(meta.mode);
    tc.rescale = meta.rescale;
    tc.input_points = meta.input_points;
    return tc;
}

train::Model model_from_checkpoint(const std::string& checkpoint, const models::ModelMeta& meta,
                                   const train::TrainConfig& tc) {
    train::Model model = train::build_model(tc, static_cast<size_t>(meta.num_classes), 0);
    model.params = models::load_model(checkpoint, meta.arch);
    return model;
}

}  // namespace

extern "C" {

const char* pct_status_name(pct_status s) {
    switch (s) {
        case PCT_OK: return "OK";
        case PCT_ERR_IO: return "IO";
        case PCT_ERR_FORMAT: return "Format";
        case PCT_ERR_SHAPE: return "Shape";
        case PCT_ERR_CONFIG: return "Config";
    }
    return "Unknown";
}

const char* pct_last_error(void) { return g_last_error.c_str(); }

const char* pct_version(void) { return "0.1.0"; }

pct_config* pct_config_new(void) { return new pct_config(); }

void pct_config_free(pct_config* cfg) { delete cfg; }

pct_status pct_config_load_file(pct_config* cfg, const char* path) {
    if (!cfg || !path) return fail(ErrorCategory::Config, "null argument");
    return guarded([&] {
        std::string text = io::read_text(path);
        size_t line_no = 0;
        size_t pos = 0;
        while (pos <= text.size()) {
            size_t nl = text.find('\n', pos);
            std::string line = text.substr(pos, nl == std::string::npos ? nl : nl - pos);
            pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
            ++line_no;
            if (size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
            line = trim(line);
            if (line.empty()) continue;
            size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw_format("config line " + std::to_string(line_no) + ": expected key=value");
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (!known_keys().count(key))
                throw_config("unknown config key '" + key + "'");
            cfg->values[key] = value;
        }
    });
}

pct_status pct_config_set(pct_config* cfg, const char* key, const char* value) {
    if (!cfg || !key || !value) return fail(ErrorCategory::Config, "null argument");
    return guarded([&] {
        if (!known_keys().count(key)) throw_config("unknown config key '" + std::string(key) + "'");
        cfg->values[key] = value;
    });
}

const char* pct_config_get(const pct_config* cfg, const char* key) {
    if (!cfg || !key) return nullptr;
    auto it = cfg->values.find(key);
    return it == cfg->values.end() ? nullptr : it->second.c_str();
}

pct_status pct_cloud_create(const char* id, const double* xyz, size_t n_points, pct_cloud** out) {
    if (!id || !xyz || !out) return fail(ErrorCategory::Config, "null argument");
    return guarded([&] {
        auto* c = new pct_cloud();
        c->cloud.id = id;
        c->cloud.points.reserve(n_points);
        for (size_t i = 0; i < n_points; ++i)
            c->cloud.points.push_back({xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]});
        *out = c;
    });
}

pct_status pct_cloud_read_xyz(const char* path, pct_cloud** out) {
    if (!path || !out) return fail(ErrorCategory::Config, "null argument");
    return guarded([&] { *out = new pct_cloud{io::read_xyz_csv(path)}; });
}

pct_status pct_cloud_write_xyz(const pct_cloud* cloud, const char* path) {
    if (!cloud || !path) return fail(ErrorCategory::Config, "null argument");
    return guarded([&] { io::write_xyz_csv(cloud->cloud, path); });
}

void pct_cloud_free(pct_cloud* cloud) { delete cloud; }

size_t pct_cloud_size(const pct_cloud* cloud) { return cloud ? cloud->cloud.size() : 0; }

const char* pct_cloud_id(const pct_cloud* cloud) { return cloud ? cloud->cloud.id.c_str() : ""; }

pct_status pct_cloud_copy_points(const pct_cloud* cloud, double* out_xyz) {
    if (!cloud || !out_xyz) return fail(ErrorCategory::Config, "null argument");
    for (size_t i = 0; i < cloud->cloud.points.size(); ++i) {
        out_xyz[3 * i] = cloud->cloud.points[i].x;
        out_xyz[3 * i + 1] = cloud->cloud.points[i].y;
        out_xyz[3 * i + 2] = cloud->cloud.points[i].z;
    }
    g_last_error.clear();
    return PCT_OK;
}

pct_status pct_cloud_centroid(const pct_cloud* cloud, double out_xyz[3]) {
    if (!cloud || !out_xyz) return fail(ErrorCategory::Config, "null argument");
    return guarded([&] {
        Point3 c = centroid(cloud->cloud);
        out_xyz[0] = c.x;
        out_xyz[1] = c.y;
        out_xyz[2] = c.z;
    });
}

pct_status pct_cloud_center(const pct_cloud* cloud, pct_cloud** out) {
    if (!cloud || !out) return fail(ErrorCategory::Config, "null argument");
    return guarded([&] { *out = new pct_cloud{center(cloud->cloud)}; });
}

pct_status pct_cloud_normalize_unit(const pct_cloud* cloud, pct_cloud** out) {
    if (!cloud || !out) return fail(ErrorCategory::Config, "null argument");
    return guarded([&] { *out = new pct_cloud{normalize_unit(cloud->cloud)}; });
}

pct_status pct_cloud_fps(const pct_cloud* cloud, size_t n, pct_cloud** out) {
    if (!cloud || !out) return fail(ErrorCategory::Config, "null argument");
    return guarded([&] { *out = new pct_cloud{fps(cloud->cloud, n)}; });
}

pct_status pct_cloud_knn(const pct_cloud* cloud, const double query_xyz[3], size_t k,
                         size_t* out_indices) {
    if (!cloud || !query_xyz || !out_indices) return fail(ErrorCategory::Config, "null argument");
    return guarded([&] {
        auto idx = knn(cloud->cloud, {query_xyz[0], query_xyz[1], query_xyz[2]}, k);
        std::copy(idx.begin(), idx.end(), out_indices);
    });
}

pct_status pct_cloud_resample(const pct_cloud* cloud, size_t n, uint64_t seed, pct_cloud** out) {
    if (!cloud || !out) return fail(ErrorCategory::Config, "null argument");
    return guarded([&] { *out = new pct_cloud{resample_fixed(cloud->cloud, n, seed)}; });
}

pct_status pct_cloud_project6(const pct_cloud* cloud, uint32_t res, double extent,
                              const char* mode, float* out_values) {
    if (!cloud || !mode || !out_values) return fail(ErrorCategory::Config, "null argument");
    return guarded([&] {
        auto ps = raster::project6(cloud->cloud, static_cast<int>(res), extent, parse_mode(mode));
        std::vector<float> flat = raster::stack_channels(ps);
        std::memcpy(out_values, flat.data(), flat.size() * sizeof(float));
    });
}

pct_status pct_run_synth(const pct_config* cfg) {
    if (!cfg) return fail(ErrorCategory::Config, "null config");
    return guarded([&] {
        Resolved r{cfg};
        auto out_dir = prepare_out_dir(r);
        size_t per_class = r.get_u64("per_class", 100);
        size_t n_points = r.get_u64("n_points", 0);
        uint64_t seed = r.get_u64("seed", 0);
        auto sd = synth::generate_dataset(synth::default_archetypes(), per_class, n_points, seed);
        synth::write_dataset(sd, out_dir.string());
        write_run_manifest(r, out_dir, "synth");
    });
}

pct_status pct_run_match(const pct_config* cfg, pct_match_stats* out_stats) {
    if (!cfg) return fail(ErrorCategory::Config, "null config");
    return guarded([&] {
        Resolved r{cfg};
        auto out_dir = prepare_out_dir(r);
        std::vector<PointCloud> clouds = io::load_clouds(r.require("manifest"));
        size_t min_points = r.get_u64("min_points", 1000);
        std::string stage = r.get("filter_stage", "post");
        if (stage != "pre" && stage != "post")
            throw_config("filter_stage must be pre or post, got '" + stage + "'");
        if (stage == "pre") clouds = filter_min_points(std::move(clouds), min_points);

        georef::PlotFrame frame{r.get_double("post_x", 0.0), r.get_double("post_y", 0.0)};
        auto census = io::read_census(r.require("census"));
        auto records = georef::locate_records(census, frame, r.get_bool("include_dead", false));
        auto match = georef::match_by_rounding(clouds, records, r.get_double("cell_size", 1.0));

        std::map<std::string, std::string> species_of_tag;
        for (const auto& rec : records) species_of_tag[rec.tag] = rec.species;
        std::vector<std::string> matched_species;
        for (const auto& [cloud_id, tag] : match.pairs)
            matched_species.push_back(species_of_tag.at(tag));
        auto dict =
            georef::group_species(matched_species, static_cast<size_t>(r.get_int("top_k", 5)));
        io::write_match_report((out_dir / "match_report.csv").string(), match.pairs,
                               matched_species, dict);
        write_run_manifest(r, out_dir, "match");
        if (out_stats) {
            out_stats->pairs = match.pairs.size();
            out_stats->ambiguous_cells = match.ambiguous_cells;
            out_stats->unmatched_clouds = match.unmatched_clouds;
            out_stats->unmatched_records = match.unmatched_records;
            out_stats->match_rate = match.match_rate;
        }
    });
}

pct_status pct_run_project(const pct_config* cfg) {
    if (!cfg) return fail(ErrorCategory::Config, "null config");
    return guarded([&] {
        Resolved r{cfg};
        auto out_dir = prepare_out_dir(r);
        std::vector<PointCloud> clouds = io::load_clouds(r.require("manifest"));
        clouds = filter_min_points(std::move(clouds), r.get_u64("min_points", 1000));
        if (clouds.empty()) throw_shape("no clouds survive the point-count filter");

        int res = static_cast<int>(r.get_int("res", 128));
        double extent = r.get_double("extent", 2.0);
        raster::Mode mode = parse_mode(r.get("mode", "density"));
        bool previews = r.get_bool("previews", true);
        std::string rescale = r.get("rescale", "unit");

        train::LabeledDataset ds;
        for (auto& c : clouds) ds.items.push_back({c.id, std::move(c), 0});
        train::center_and_rescale(ds, rescale);

        std::filesystem::create_directories(out_dir / "rasters");
        if (previews) std::filesystem::create_directories(out_dir / "previews");
        for (const auto& item : ds.items) {
            auto ps = raster::project6(item.cloud, res, extent, mode);
            raster::write_raw(ps, (out_dir / "rasters" / (item.id + ".pctr")).string());
            if (previews)
                for (int v = 0; v < raster::kNumViews; ++v) {
                    std::string name =
                        item.id + "_" + raster::view_name(static_cast<raster::View>(v)) + ".pgm";
                    raster::write_pgm(ps.views[v], (out_dir / "previews" / name).string());
                }
        }
        write_run_manifest(r, out_dir, "project");
    });
}

pct_status pct_run_train(const pct_config* cfg) {
    if (!cfg) return fail(ErrorCategory::Config, "null config");
    return guarded([&] {
        Resolved r{cfg};
        auto out_dir = prepare_out_dir(r);
        train::TrainConfig tc = train_config_from(r);

        train::LabeledDataset ds = build_labeled_dataset(r, nullptr);
        train::center_and_rescale(ds, tc.rescale);
        auto [train_side, test_side] =
            train::stratified_split(ds, tc.split_fraction, Rng::derive(tc.seed, 10));
        train_side =
            train::resample(train_side, r.get("resample", "none"), Rng::derive(tc.seed, 11));

        train::PreparedDataset train_prep = train::prepare(train_side, tc);
        train::PreparedDataset test_prep = train::prepare(test_side, tc);
        train::TrainResult result = train::train_model(tc, train_prep, test_prep);

        std::vector<train::EpochMetrics> trained(result.epochs.begin() + 1, result.epochs.end());
        train::write_metrics_csv((out_dir / "metrics.csv").string(), trained);
        train::write_timing_csv((out_dir / "timing.csv").string(), result.epochs);

        std::string checkpoint = (out_dir / "model.pctw").string();
        models::save_model(result.model.params, checkpoint);
        models::save_meta(meta_from(tc, result.model, ds.dictionary.class_names),
                          checkpoint + ".meta");
        io::write_text((out_dir / "report.txt").string(),
                       train::format_report(result.final_report, tc.model,
                                            ds.dictionary.class_names));
        write_run_manifest(r, out_dir, "train");
    });
}

pct_status pct_run_eval(const pct_config* cfg, char** out_report) {
    if (!cfg) return fail(ErrorCategory::Config, "null config");
    return guarded([&] {
        Resolved r{cfg};
        auto out_dir = prepare_out_dir(r);
        std::string checkpoint = r.require("checkpoint");
        models::ModelMeta meta = models::load_meta(checkpoint + ".meta");
        train::TrainConfig tc = train_config_from_meta(meta, r);
        train::Model model = model_from_checkpoint(checkpoint, meta, tc);

        georef::ClassDictionary dict;
        dict.class_names = meta.class_names;
        train::LabeledDataset ds = build_labeled_dataset(r, &dict);
        train::center_and_rescale(ds, tc.rescale);
        train::PreparedDataset prep = train::prepare(ds, tc);

        train::EvalReport report =
            train::evaluate(model, prep, r.get_u64("batch_size", 32));
        std::string text = train::format_report(report, meta.arch, meta.class_names);
        io::write_text((out_dir / "eval_report.txt").string(), text);
        write_run_manifest(r, out_dir, "eval");
        if (out_report) {
            *out_report = static_cast<char*>(std::malloc(text.size() + 1));
            std::memcpy(*out_report, text.c_str(), text.size() + 1);
        }
    });
}

pct_status pct_run_predict(const pct_config* cfg) {
    if (!cfg) return fail(ErrorCategory::Config, "null config");
    return guarded([&] {
        Resolved r{cfg};
        auto out_dir = prepare_out_dir(r);
        std::string checkpoint = r.require("checkpoint");
        models::ModelMeta meta = models::load_meta(checkpoint + ".meta");
        train::TrainConfig tc = train_config_from_meta(meta, r);
        train::Model model = model_from_checkpoint(checkpoint, meta, tc);

        std::vector<PointCloud> clouds = io::load_clouds(r.require("manifest"));
        clouds = filter_min_points(std::move(clouds), r.get_u64("min_points", 1000));
        if (clouds.empty()) throw_shape("no clouds survive the point-count filter");
        train::LabeledDataset ds;
        ds.dictionary.class_names = meta.class_names;
        for (auto& c : clouds) ds.items.push_back({c.id, std::move(c), 0});
        train::center_and_rescale(ds, tc.rescale);
        train::PreparedDataset prep = train::prepare(ds, tc);

        tensor::NoGradGuard ng;
        models::ForwardCtx<float> ctx;
        std::vector<std::vector<std::string>> rows;
        rows.push_back({"cloud_id", "class_index", "class_name"});
        size_t batch = r.get_u64("batch_size", 32);
        for (size_t start = 0; start < prep.features.size(); start += batch) {
            size_t stop = std::min(prep.features.size(), start + batch);
            std::vector<float> data;
            for (size_t i = start; i < stop; ++i)
                data.insert(data.end(), prep.features[i].begin(), prep.features[i].end());
            int64_t n = static_cast<int64_t>(stop - start);
            tensor::Tensor batch_t =
                prep.kind == train::PreparedDataset::Kind::Projections
                    ? tensor::Tensor::from({n, raster::kNumViews, prep.res, prep.res},
                                           std::move(data))
                    : tensor::Tensor::from({n, prep.points, 3}, std::move(data));
            tensor::Tensor logits = train::model_forward(model, batch_t, ctx);
            const auto& lv = logits.values();
            size_t k = meta.class_names.size();
            for (size_t row = 0; row < static_cast<size_t>(n); ++row) {
                size_t best = 0;
                for (size_t c = 1; c < k; ++c)
                    if (lv[row * k + c] > lv[row * k + best]) best = c;
                rows.push_back({prep.ids[start + row], std::to_string(best),
                                meta.class_names[best]});
            }
        }
        io::write_csv((out_dir / "predictions.csv").string(), rows);
        write_run_manifest(r, out_dir, "predict");
    });
}

void pct_string_free(char* s) { std::free(s); }

} /* extern "C" */
